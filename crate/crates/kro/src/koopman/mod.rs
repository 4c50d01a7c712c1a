//! Learned lifted-linear surrogate models.
//!
//! A model is an encoder MLP into a latent space of dimension `l >= n`, a
//! decoder MLP back, and a pair of matrices `(k_a, k_b)` so that latent
//! trajectories follow `z' = k_a z + k_b u`. States are standardized
//! per-dimension before they meet the networks; the affine standardization is
//! part of the model and can be folded into the network weights so that
//! downstream bound propagation sees plain raw-state networks.

pub mod loss;
pub mod mlp;
pub mod train;

pub use loss::{loss_and_gradients, loss_autoencoder, loss_multistep, LossConfig, ModelGrads};
pub use mlp::{Activation, DenseLayer, MlpNetwork};
pub use train::{train, TrainingConfig};

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis};

/// Smallest per-dimension scale; dimensions with less spread are left at
/// this floor instead of dividing by ~0.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension affine standardization `x_norm = (x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Normalization {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    /// Fits mean and population standard deviation per column.
    pub fn fit(states: &Array2<f64>) -> Result<Self> {
        if states.nrows() == 0 {
            return Err(Error::invalid("cannot fit normalization to no data".to_string()));
        }
        let mean = states.mean_axis(Axis(0)).expect("non-empty");
        let mut std = Array1::zeros(states.ncols());
        for j in 0..states.ncols() {
            let col = states.column(j);
            let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / col.len() as f64;
            std[j] = var.sqrt().max(STD_FLOOR);
        }
        Ok(Normalization { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &Array1<f64>) -> Array1<f64> {
        (x - &self.mean) / &self.std
    }

    pub fn denormalize(&self, x: &Array1<f64>) -> Array1<f64> {
        x * &self.std + &self.mean
    }

    pub fn normalize_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.std
    }

    pub fn denormalize_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        x * &self.std + &self.mean
    }
}

/// Training provenance carried inside a saved model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    /// Mean composite loss over the dataset, one entry per epoch plus the
    /// initial evaluation at index 0.
    pub epoch_losses: Vec<f64>,
}

/// Encoder, decoder, lifted dynamics, and the standardization they assume.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub encoder: MlpNetwork,
    pub decoder: MlpNetwork,
    pub k_a: Array2<f64>,
    pub k_b: Array2<f64>,
    pub normalization: Normalization,
    pub meta: Option<TrainingMeta>,
}

impl KoopmanModel {
    pub fn new(
        encoder: MlpNetwork,
        decoder: MlpNetwork,
        k_a: Array2<f64>,
        k_b: Array2<f64>,
        normalization: Normalization,
    ) -> Result<Self> {
        let n = encoder.input_dim();
        let l = encoder.output_dim();
        if l < n {
            return Err(Error::invalid(format!(
                "latent dimension {l} must be at least the state dimension {n}"
            )));
        }
        if decoder.input_dim() != l || decoder.output_dim() != n {
            return Err(Error::dimension(format!(
                "decoder maps {} -> {}, expected {} -> {}",
                decoder.input_dim(),
                decoder.output_dim(),
                l,
                n
            )));
        }
        if k_a.nrows() != l || k_a.ncols() != l {
            return Err(Error::dimension(format!(
                "k_a is {}x{}, expected {l}x{l}",
                k_a.nrows(),
                k_a.ncols()
            )));
        }
        if k_b.nrows() != l || k_b.ncols() == 0 {
            return Err(Error::dimension(format!(
                "k_b is {}x{}, expected {l} rows and at least one column",
                k_b.nrows(),
                k_b.ncols()
            )));
        }
        if normalization.dim() != n || normalization.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid(
                "normalization must match the state dimension with positive scales".to_string(),
            ));
        }
        Ok(KoopmanModel {
            encoder,
            decoder,
            k_a,
            k_b,
            normalization,
            meta: None,
        })
    }

    /// An exact identity model: `l = n`, both networks single identity
    /// layers, latent dynamics supplied by the caller.
    pub fn exact_linear(k_a: Array2<f64>, k_b: Array2<f64>) -> Result<Self> {
        let n = k_a.nrows();
        KoopmanModel::new(
            MlpNetwork::identity(n),
            MlpNetwork::identity(n),
            k_a,
            k_b,
            Normalization::identity(n),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.k_b.ncols()
    }

    /// Lifts a raw state into the latent space.
    pub fn encode(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::dimension(format!(
                "encode expects {} states, got {}",
                self.state_dim(),
                x.len()
            )));
        }
        self.encoder.forward(&self.normalization.normalize(x))
    }

    pub fn encode_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.encoder
            .forward_batch(&self.normalization.normalize_batch(x))
    }

    /// Maps a latent vector back to a raw state.
    pub fn decode(&self, z: &Array1<f64>) -> Result<Array1<f64>> {
        Ok(self.normalization.denormalize(&self.decoder.forward(z)?))
    }

    pub fn decode_batch(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self
            .normalization
            .denormalize_batch(&self.decoder.forward_batch(z)?))
    }

    /// One step of the lifted linear dynamics.
    pub fn latent_step(&self, z: &Array1<f64>, u: &Array1<f64>) -> Result<Array1<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::dimension(format!(
                "latent_step expects {} latent entries, got {}",
                self.latent_dim(),
                z.len()
            )));
        }
        if u.len() != self.control_dim() {
            return Err(Error::dimension(format!(
                "latent_step expects {} controls, got {}",
                self.control_dim(),
                u.len()
            )));
        }
        Ok(self.k_a.dot(z) + self.k_b.dot(u))
    }

    /// The encoder with standardization folded into its first layer, so the
    /// returned network maps raw states directly. Exact up to one extra
    /// rounding per weight.
    pub fn encoder_network(&self) -> MlpNetwork {
        let mut net = self.encoder.clone();
        let first = &mut net.layers[0];
        for c in 0..first.weight.ncols() {
            let scale = 1.0 / self.normalization.std[c];
            for r in 0..first.weight.nrows() {
                first.weight[[r, c]] *= scale;
            }
        }
        let shift = first.weight.dot(&self.normalization.mean);
        first.bias = &first.bias - &shift;
        net
    }

    /// The decoder with de-standardization folded into its last layer.
    pub fn decoder_network(&self) -> MlpNetwork {
        let mut net = self.decoder.clone();
        let last = net.layers.last_mut().expect("non-empty");
        for r in 0..last.weight.nrows() {
            let scale = self.normalization.std[r];
            for c in 0..last.weight.ncols() {
                last.weight[[r, c]] *= scale;
            }
        }
        last.bias = &last.bias * &self.normalization.std + &self.normalization.mean;
        net
    }
}
