//! Mini-batch SGD for the lifted-linear model.
//!
//! The optimizer is deliberately plain: momentum SGD with a cosine learning
//! rate annealed to zero over the whole run, weight decay on weight matrices
//! (never on biases), and gradients averaged over the mini-batch. The latent
//! transition starts at the identity and the input matrix and all network
//! weights start Xavier-uniform, so an untrained model already represents
//! "stay put", which keeps early steps well-scaled.
//!
//! Every epoch the full-dataset loss is evaluated and the best parameters
//! seen so far are kept, so the returned model is never worse than the
//! initialization it started from.

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::koopman::loss::{autoencoder_term, multistep_term, LossConfig, ModelGrads};
use crate::koopman::mlp::{xavier_init, Activation, MlpNetwork};
use crate::koopman::{KoopmanModel, Normalization, TrainingMeta};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Architecture and optimizer settings for [`train`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainingConfig {
    /// Lifted dimension; must be at least the state dimension.
    pub latent_dim: usize,
    /// Hidden widths shared by encoder and decoder (the decoder mirrors
    /// them).
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Weight of the reconstruction term.
    pub lambda1: f64,
    /// Weight of the multi-step prediction term.
    pub lambda2: f64,
    /// Multi-step window length.
    pub horizon: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainingConfig {
    pub fn validate(&self, state_dim: usize, min_horizon: usize) -> Result<()> {
        if self.latent_dim < state_dim {
            return Err(Error::invalid(format!(
                "latent dimension {} below state dimension {state_dim}",
                self.latent_dim
            )));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::invalid("hidden widths must be positive".to_string()));
        }
        self.loss_config().validate()?;
        if self.lambda2 > 0.0 && self.horizon > min_horizon {
            return Err(Error::invalid(format!(
                "multi-step horizon {} exceeds the shortest trajectory horizon {min_horizon}",
                self.horizon
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1".to_string()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)".to_string()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight decay must be >= 0".to_string()));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            horizon: self.horizon,
        }
    }
}

/// Fits a model to a set of trajectories.
pub fn train(dataset: &[Trajectory], cfg: &TrainingConfig) -> Result<KoopmanModel> {
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty".to_string()));
    }
    for traj in dataset {
        traj.validate()?;
    }
    let n = dataset[0].state_dim();
    let m = dataset[0].control_dim();
    if dataset
        .iter()
        .any(|t| t.state_dim() != n || t.control_dim() != m)
    {
        return Err(Error::dimension(
            "trajectories in the dataset have mixed dimensions".to_string(),
        ));
    }
    let min_horizon = dataset.iter().map(Trajectory::horizon).min().expect("non-empty");
    cfg.validate(n, min_horizon)?;
    let loss_cfg = cfg.loss_config();

    let total_rows: usize = dataset.iter().map(|t| t.states.len()).sum();
    let mut stacked = Array2::zeros((total_rows, n));
    let mut row = 0;
    for traj in dataset {
        for s in &traj.states {
            stacked.row_mut(row).assign(s);
            row += 1;
        }
    }
    let normalization = Normalization::fit(&stacked)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut enc_dims = vec![n];
    enc_dims.extend_from_slice(&cfg.hidden);
    enc_dims.push(cfg.latent_dim);
    let mut dec_dims = vec![cfg.latent_dim];
    dec_dims.extend(cfg.hidden.iter().rev().copied());
    dec_dims.push(n);
    let encoder = MlpNetwork::xavier(&enc_dims, cfg.activation, &mut rng)?;
    let decoder = MlpNetwork::xavier(&dec_dims, cfg.activation, &mut rng)?;
    let k_a = Array2::eye(cfg.latent_dim);
    let k_b = xavier_init(cfg.latent_dim, m, &mut rng);
    let mut model = KoopmanModel::new(encoder, decoder, k_a, k_b, normalization)?;

    // Normalize once; the loss internals consume standardized batches.
    let data: Vec<(Array2<f64>, Array2<f64>)> = dataset
        .iter()
        .map(|t| {
            (
                model.normalization.normalize_batch(&t.state_matrix()),
                t.control_matrix(),
            )
        })
        .collect();
    let count = data.len() as f64;

    let initial = dataset_loss(&model, &data, &loss_cfg)? / count;
    if !initial.is_finite() {
        return Err(Error::Divergence(format!(
            "initial loss is {initial}; check the data scale"
        )));
    }
    let mut epoch_losses = vec![initial];
    let mut best_loss = initial;
    let mut best = snapshot(&model);

    let mut velocity = ModelGrads::zeros(&model);
    let batches_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch).max(1);
    let mut step = 0usize;
    let mut indices: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let mut grads = ModelGrads::zeros(&model);
            let mut batch_loss = 0.0;
            // Count the squared-error rows behind the gradient so the update
            // can use a per-row mean; that keeps the learning rate scale-free
            // in trajectory length, window count, and batch size.
            let mut rows = 0usize;
            for &i in chunk {
                let (xn, u) = &data[i];
                if loss_cfg.lambda1 > 0.0 {
                    batch_loss += loss_cfg.lambda1
                        * autoencoder_term(&model, xn, Some((&mut grads, loss_cfg.lambda1)))?;
                    rows += xn.nrows();
                }
                if loss_cfg.lambda2 > 0.0 {
                    batch_loss += loss_cfg.lambda2
                        * multistep_term(
                            &model,
                            xn,
                            u,
                            loss_cfg.horizon,
                            Some((&mut grads, loss_cfg.lambda2)),
                        )?;
                    rows += loss_cfg.horizon * (u.nrows() + 1 - loss_cfg.horizon);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite batch loss at epoch {epoch}"
                )));
            }
            let progress = step as f64 / total_steps as f64;
            let lr = cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            // The latent dynamics see much steeper gradients than the
            // networks (they scale with the squared latent magnitude), so an
            // unclipped first step can kick the identity-initialized K_A
            // unstable. Clip the row-averaged gradient by its global norm.
            let mut scale = 1.0 / rows.max(1) as f64;
            let norm = grad_norm(&grads) * scale;
            if norm > GRAD_CLIP {
                scale *= GRAD_CLIP / norm;
            }
            apply_update(
                &mut model,
                &grads,
                &mut velocity,
                lr,
                cfg.momentum,
                cfg.weight_decay,
                scale,
            );
            step += 1;
        }
        let loss = dataset_loss(&model, &data, &loss_cfg)? / count;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite dataset loss after epoch {epoch}"
            )));
        }
        epoch_losses.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = snapshot(&model);
        }
    }

    restore(&mut model, best);
    model.meta = Some(TrainingMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        final_loss: best_loss,
        epoch_losses,
    });
    Ok(model)
}

/// Largest permitted L2 norm of the row-averaged gradient; steps beyond it
/// are rescaled onto the ball.
const GRAD_CLIP: f64 = 100.0;

fn grad_norm(grads: &ModelGrads) -> f64 {
    let mut sq = 0.0;
    let mut eat_net = |g: &crate::koopman::mlp::MlpGrads| {
        for w in &g.weights {
            sq += w.iter().map(|v| v * v).sum::<f64>();
        }
        for b in &g.biases {
            sq += b.iter().map(|v| v * v).sum::<f64>();
        }
    };
    eat_net(&grads.encoder);
    eat_net(&grads.decoder);
    sq += grads.k_a.iter().map(|v| v * v).sum::<f64>();
    sq += grads.k_b.iter().map(|v| v * v).sum::<f64>();
    sq.sqrt()
}

/// Composite loss summed over pre-normalized trajectories, in dataset order.
fn dataset_loss(
    model: &KoopmanModel,
    data: &[(Array2<f64>, Array2<f64>)],
    cfg: &LossConfig,
) -> Result<f64> {
    let mut l1_sum = 0.0;
    let mut l2_sum = 0.0;
    for (xn, u) in data {
        if cfg.lambda1 > 0.0 {
            l1_sum += autoencoder_term(model, xn, None)?;
        }
        if cfg.lambda2 > 0.0 {
            l2_sum += multistep_term(model, xn, u, cfg.horizon, None)?;
        }
    }
    Ok(cfg.lambda1 * l1_sum + cfg.lambda2 * l2_sum)
}

struct Snapshot {
    encoder: MlpNetwork,
    decoder: MlpNetwork,
    k_a: Array2<f64>,
    k_b: Array2<f64>,
}

fn snapshot(model: &KoopmanModel) -> Snapshot {
    Snapshot {
        encoder: model.encoder.clone(),
        decoder: model.decoder.clone(),
        k_a: model.k_a.clone(),
        k_b: model.k_b.clone(),
    }
}

fn restore(model: &mut KoopmanModel, s: Snapshot) {
    model.encoder = s.encoder;
    model.decoder = s.decoder;
    model.k_a = s.k_a;
    model.k_b = s.k_b;
}

fn apply_update(
    model: &mut KoopmanModel,
    grads: &ModelGrads,
    velocity: &mut ModelGrads,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    scale: f64,
) {
    let mat = |theta: &mut Array2<f64>, g: &Array2<f64>, v: &mut Array2<f64>, wd: f64| {
        azip_mat(theta, g, v, lr, momentum, wd, scale);
    };
    for i in 0..model.encoder.layers.len() {
        mat(
            &mut model.encoder.layers[i].weight,
            &grads.encoder.weights[i],
            &mut velocity.encoder.weights[i],
            weight_decay,
        );
        vec_update(
            &mut model.encoder.layers[i].bias,
            &grads.encoder.biases[i],
            &mut velocity.encoder.biases[i],
            lr,
            momentum,
            scale,
        );
    }
    for i in 0..model.decoder.layers.len() {
        mat(
            &mut model.decoder.layers[i].weight,
            &grads.decoder.weights[i],
            &mut velocity.decoder.weights[i],
            weight_decay,
        );
        vec_update(
            &mut model.decoder.layers[i].bias,
            &grads.decoder.biases[i],
            &mut velocity.decoder.biases[i],
            lr,
            momentum,
            scale,
        );
    }
    mat(&mut model.k_a, &grads.k_a, &mut velocity.k_a, weight_decay);
    mat(&mut model.k_b, &grads.k_b, &mut velocity.k_b, weight_decay);
}

fn azip_mat(
    theta: &mut Array2<f64>,
    g: &Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    momentum: f64,
    wd: f64,
    scale: f64,
) {
    ndarray::Zip::from(theta)
        .and(g)
        .and(v)
        .for_each(|t, &g, v| {
            *v = momentum * *v - lr * (g * scale + wd * *t);
            *t += *v;
        });
}

fn vec_update(
    theta: &mut Array1<f64>,
    g: &Array1<f64>,
    v: &mut Array1<f64>,
    lr: f64,
    momentum: f64,
    scale: f64,
) {
    ndarray::Zip::from(theta)
        .and(g)
        .and(v)
        .for_each(|t, &g, v| {
            *v = momentum * *v - lr * g * scale;
            *t += *v;
        });
}
