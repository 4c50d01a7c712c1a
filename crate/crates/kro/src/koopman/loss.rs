//! The composite training objective and its exact gradients.
//!
//! Two terms, both measured in the standardized state frame the networks
//! operate in:
//!
//! * reconstruction: for every sample, `|x - dec(enc(x))|^2 +
//!   |enc(x) - enc(dec(enc(x)))|^2`, the second part tying re-encoded
//!   reconstructions back to the latent point;
//! * multi-step prediction: every length-`h` window of the trajectory is
//!   lifted once at its start, advanced `h` steps with the latent linear
//!   dynamics, and charged `|x_{t+j} - dec(z_j)|^2 + |enc(x_{t+j}) - z_j|^2`
//!   at every step.
//!
//! The composite loss is `lambda1 * L1 + lambda2 * L2`, summed over all
//! trajectories in a batch. Gradients are computed by reverse accumulation
//! through the shared encoder evaluation, the latent recursion, and the
//! per-step decoder evaluations; no autodiff framework is involved, which
//! keeps the arithmetic reproducible.

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::koopman::mlp::MlpGrads;
use crate::koopman::KoopmanModel;
use ndarray::{s, Array2};

/// Loss weights and the multi-step window length.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub horizon: usize,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return Err(Error::invalid(
                "loss weights must be non-negative".to_string(),
            ));
        }
        if self.lambda1 + self.lambda2 <= 0.0 {
            return Err(Error::invalid(
                "at least one loss weight must be positive".to_string(),
            ));
        }
        if self.lambda2 > 0.0 && self.horizon == 0 {
            return Err(Error::invalid(
                "multi-step horizon must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Gradients for every trainable tensor of a model.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    pub k_a: Array2<f64>,
    pub k_b: Array2<f64>,
}

impl ModelGrads {
    pub fn zeros(model: &KoopmanModel) -> Self {
        ModelGrads {
            encoder: MlpGrads::zeros(&model.encoder),
            decoder: MlpGrads::zeros(&model.decoder),
            k_a: Array2::zeros(model.k_a.raw_dim()),
            k_b: Array2::zeros(model.k_b.raw_dim()),
        }
    }
}

fn check_compatible(model: &KoopmanModel, traj: &Trajectory) -> Result<()> {
    traj.validate()?;
    if traj.state_dim() != model.state_dim() {
        return Err(Error::dimension(format!(
            "trajectory has {}-dimensional states, model expects {}",
            traj.state_dim(),
            model.state_dim()
        )));
    }
    if traj.control_dim() != model.control_dim() {
        return Err(Error::dimension(format!(
            "trajectory has {}-dimensional controls, model expects {}",
            traj.control_dim(),
            model.control_dim()
        )));
    }
    Ok(())
}

/// Reconstruction and latent-consistency loss of one trajectory.
pub fn loss_autoencoder(model: &KoopmanModel, traj: &Trajectory) -> Result<f64> {
    check_compatible(model, traj)?;
    let xn = model.normalization.normalize_batch(&traj.state_matrix());
    autoencoder_term(model, &xn, None)
}

/// Sliding-window multi-step prediction loss of one trajectory.
pub fn loss_multistep(model: &KoopmanModel, traj: &Trajectory, horizon: usize) -> Result<f64> {
    check_compatible(model, traj)?;
    if horizon == 0 || horizon > traj.horizon() {
        return Err(Error::invalid(format!(
            "multi-step horizon {horizon} must be in 1..={}",
            traj.horizon()
        )));
    }
    let xn = model.normalization.normalize_batch(&traj.state_matrix());
    let u = traj.control_matrix();
    multistep_term(model, &xn, &u, horizon, None)
}

/// Composite loss over a batch together with its gradients.
///
/// The returned scalar is exactly `lambda1 * sum(L1) + lambda2 * sum(L2)`
/// with the per-trajectory sums accumulated in batch order, so it decomposes
/// bitwise into the values of [`loss_autoencoder`] and [`loss_multistep`].
/// Terms whose weight is zero are skipped entirely.
pub fn loss_and_gradients(
    model: &KoopmanModel,
    batch: &[&Trajectory],
    cfg: &LossConfig,
) -> Result<(f64, ModelGrads)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch".to_string()));
    }
    let mut grads = ModelGrads::zeros(model);
    let mut l1_sum = 0.0;
    let mut l2_sum = 0.0;
    for traj in batch {
        check_compatible(model, traj)?;
        if cfg.lambda2 > 0.0 && cfg.horizon > traj.horizon() {
            return Err(Error::invalid(format!(
                "multi-step horizon {} exceeds trajectory horizon {}",
                cfg.horizon,
                traj.horizon()
            )));
        }
        let xn = model.normalization.normalize_batch(&traj.state_matrix());
        if cfg.lambda1 > 0.0 {
            l1_sum += autoencoder_term(model, &xn, Some((&mut grads, cfg.lambda1)))?;
        }
        if cfg.lambda2 > 0.0 {
            let u = traj.control_matrix();
            l2_sum += multistep_term(model, &xn, &u, cfg.horizon, Some((&mut grads, cfg.lambda2)))?;
        }
    }
    Ok((cfg.lambda1 * l1_sum + cfg.lambda2 * l2_sum, grads))
}

fn sum_sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// L1 on a standardized state batch. When a gradient sink is provided, the
/// adjoints are scaled by the sink weight; the returned loss never is.
pub(crate) fn autoencoder_term(
    model: &KoopmanModel,
    xn: &Array2<f64>,
    sink: Option<(&mut ModelGrads, f64)>,
) -> Result<f64> {
    let (a, cache_enc) = model.encoder.forward_cache(xn)?;
    let (r, cache_dec) = model.decoder.forward_cache(&a)?;
    let (a2, cache_reenc) = model.encoder.forward_cache(&r)?;
    let d_state = xn - &r;
    let d_latent = &a - &a2;
    let loss = sum_sq(&d_state) + sum_sq(&d_latent);
    if let Some((grads, weight)) = sink {
        let two_w = 2.0 * weight;
        let d_r_reenc = model.encoder.backward(
            &cache_reenc,
            d_latent.mapv(|v| -two_w * v),
            &mut grads.encoder,
        );
        let d_r = d_state.mapv(|v| -two_w * v) + d_r_reenc;
        let d_a_dec = model.decoder.backward(&cache_dec, d_r, &mut grads.decoder);
        let d_a = d_latent.mapv(|v| two_w * v) + d_a_dec;
        model.encoder.backward(&cache_enc, d_a, &mut grads.encoder);
    }
    Ok(loss)
}

/// L2 on a standardized state batch and its controls.
pub(crate) fn multistep_term(
    model: &KoopmanModel,
    xn: &Array2<f64>,
    u: &Array2<f64>,
    horizon: usize,
    sink: Option<(&mut ModelGrads, f64)>,
) -> Result<f64> {
    let t_len = u.nrows();
    debug_assert!(horizon >= 1 && horizon <= t_len);
    let windows = t_len + 1 - horizon;

    let (e, cache_enc) = model.encoder.forward_cache(xn)?;
    let latent = model.latent_dim();

    // z[j] holds the j-step predictions of all windows, one window per row.
    let mut z = Vec::with_capacity(horizon + 1);
    z.push(e.slice(s![0..windows, ..]).to_owned());
    let mut dec_caches = Vec::with_capacity(horizon);
    let mut d_states = Vec::with_capacity(horizon);
    let mut d_latents = Vec::with_capacity(horizon);
    let mut loss = 0.0;
    for j in 1..=horizon {
        let u_j = u.slice(s![j - 1..j - 1 + windows, ..]);
        let z_next = z[j - 1].dot(&model.k_a.t()) + u_j.dot(&model.k_b.t());
        let (dec_out, cache_dec) = model.decoder.forward_cache(&z_next)?;
        let d_state = &xn.slice(s![j..j + windows, ..]) - &dec_out;
        let d_latent = &e.slice(s![j..j + windows, ..]) - &z_next;
        loss += sum_sq(&d_state) + sum_sq(&d_latent);
        z.push(z_next);
        dec_caches.push(cache_dec);
        d_states.push(d_state);
        d_latents.push(d_latent);
    }

    if let Some((grads, weight)) = sink {
        let two_w = 2.0 * weight;
        let mut e_adj = Array2::zeros((t_len + 1, latent));
        // dL/dz[j] flowing backward through the latent recursion.
        let mut carry = Array2::zeros((windows, latent));
        for j in (1..=horizon).rev() {
            let d_state = &d_states[j - 1];
            let d_latent = &d_latents[j - 1];
            e_adj
                .slice_mut(s![j..j + windows, ..])
                .scaled_add(two_w, d_latent);
            let d_z_dec = model.decoder.backward(
                &dec_caches[j - 1],
                d_state.mapv(|v| -two_w * v),
                &mut grads.decoder,
            );
            let mut z_bar = carry + d_z_dec;
            z_bar.scaled_add(-two_w, d_latent);
            grads.k_a = &grads.k_a + &z_bar.t().dot(&z[j - 1]);
            let u_j = u.slice(s![j - 1..j - 1 + windows, ..]);
            grads.k_b = &grads.k_b + &z_bar.t().dot(&u_j);
            carry = z_bar.dot(&model.k_a);
        }
        e_adj.slice_mut(s![0..windows, ..]).scaled_add(1.0, &carry);
        model.encoder.backward(&cache_enc, e_adj, &mut grads.encoder);
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_reference, ReferenceConfig, System, Trajectory};
    use crate::geom::IntervalBox;
    use crate::koopman::mlp::{xavier_init, Activation, MlpNetwork};
    use crate::koopman::Normalization;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// x' = 2x + u with identity lifting reproduces its own trajectories,
    /// so both losses vanish.
    fn exact_scalar_model() -> KoopmanModel {
        KoopmanModel::exact_linear(array![[2.0]], array![[1.0]]).unwrap()
    }

    fn scalar_traj() -> Trajectory {
        // 1 -> 3 -> 7 under x' = 2x + 1.
        Trajectory {
            states: vec![array![1.0], array![3.0], array![7.0]],
            controls: vec![array![1.0], array![1.0]],
        }
    }

    #[test]
    fn exact_model_has_zero_loss() {
        let model = exact_scalar_model();
        let traj = scalar_traj();
        assert_eq!(loss_autoencoder(&model, &traj).unwrap(), 0.0);
        assert_eq!(loss_multistep(&model, &traj, 1).unwrap(), 0.0);
        assert_eq!(loss_multistep(&model, &traj, 2).unwrap(), 0.0);
    }

    #[test]
    fn autoencoder_loss_matches_hand_computation() {
        // Decoder halves the state: both residuals are x/2 at each sample.
        let mut model = exact_scalar_model();
        model.decoder.layers[0].weight[[0, 0]] = 0.5;
        let traj = scalar_traj();
        // sum over x in {1,3,7} of 2 * (x/2)^2 = 0.5 * (1 + 9 + 49)
        assert_abs_diff_eq!(
            loss_autoencoder(&model, &traj).unwrap(),
            29.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn multistep_loss_matches_hand_computation() {
        let mut model = exact_scalar_model();
        model.k_a[[0, 0]] = 2.1;
        let traj = scalar_traj();
        // h=1, identity lifting: windows t=0,1 each pay twice the squared
        // one-step error 0.1*x_t.
        let expected = 2.0 * (0.1f64).powi(2) + 2.0 * (0.3f64).powi(2);
        assert_abs_diff_eq!(loss_multistep(&model, &traj, 1).unwrap(), expected, epsilon = 1e-12);
        // h=2: one window, errors at step one (0.1) and step two
        // (2.1*3.1 + 1 - 7 = 0.51).
        let expected = 2.0 * (0.1f64).powi(2) + 2.0 * (0.51f64).powi(2);
        assert_abs_diff_eq!(loss_multistep(&model, &traj, 2).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn horizon_bounds_are_enforced() {
        let model = exact_scalar_model();
        let traj = scalar_traj();
        assert!(loss_multistep(&model, &traj, 0).is_err());
        assert!(loss_multistep(&model, &traj, 3).is_err());
    }

    #[test]
    fn composite_loss_decomposes_exactly() {
        let model = test_model(5);
        let trajs = [test_traj(1), test_traj(2)];
        let batch: Vec<&Trajectory> = trajs.iter().collect();
        let cfg = LossConfig {
            lambda1: 0.7,
            lambda2: 1.3,
            horizon: 3,
        };
        let (loss, _) = loss_and_gradients(&model, &batch, &cfg).unwrap();
        let l1: f64 = trajs
            .iter()
            .map(|t| loss_autoencoder(&model, t).unwrap())
            .sum();
        let l2: f64 = trajs
            .iter()
            .map(|t| loss_multistep(&model, t, cfg.horizon).unwrap())
            .sum();
        assert_eq!(loss, cfg.lambda1 * l1 + cfg.lambda2 * l2);
    }

    #[test]
    fn zero_weight_skips_a_term() {
        let model = test_model(6);
        let trajs = [test_traj(3)];
        let batch: Vec<&Trajectory> = trajs.iter().collect();
        let cfg = LossConfig {
            lambda1: 1.0,
            lambda2: 0.0,
            horizon: 3,
        };
        let (loss, grads) = loss_and_gradients(&model, &batch, &cfg).unwrap();
        assert_eq!(loss, loss_autoencoder(&model, &trajs[0]).unwrap());
        assert!(grads.k_a.iter().all(|&g| g == 0.0));
        assert!(grads.k_b.iter().all(|&g| g == 0.0));
        assert!(LossConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            horizon: 1
        }
        .validate()
        .is_err());
    }

    fn test_model(seed: u64) -> KoopmanModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = MlpNetwork::xavier(&[3, 5, 4], Activation::Gelu, &mut rng).unwrap();
        let decoder = MlpNetwork::xavier(&[4, 5, 3], Activation::Gelu, &mut rng).unwrap();
        let mut k_a = ndarray::Array2::eye(4);
        k_a[[0, 1]] = 0.05;
        let k_b = xavier_init(4, 2, &mut rng);
        let norm = Normalization {
            mean: array![0.1, -0.2, 0.05],
            std: array![1.1, 0.9, 0.7],
        };
        KoopmanModel::new(encoder, decoder, k_a, k_b, norm).unwrap()
    }

    fn test_traj(seed: u64) -> Trajectory {
        generate_reference(
            &System::unicycle(),
            &ReferenceConfig {
                horizon: 8,
                smoothing_window: 3,
                control_bounds: vec![(0.2, 1.0), (-0.8, 0.8)],
                init_box: IntervalBox::ball(&Array1::zeros(3), 0.3).unwrap(),
                seed,
            },
        )
        .unwrap()
    }

    /// Central differences over a sample of every parameter tensor. GELU
    /// keeps the objective smooth, so the agreement should be tight.
    #[test]
    fn gradients_match_finite_differences() {
        let trajs = [test_traj(11), test_traj(12)];
        let batch: Vec<&Trajectory> = trajs.iter().collect();
        let cfg = LossConfig {
            lambda1: 0.8,
            lambda2: 1.2,
            horizon: 4,
        };
        let model = test_model(21);
        let (_, grads) = loss_and_gradients(&model, &batch, &cfg).unwrap();
        let eval = |m: &KoopmanModel| loss_and_gradients(m, &batch, &cfg).unwrap().0;
        let h = 1e-6;
        let check = |analytic: f64, up: f64, down: f64| {
            let fd = (up - down) / (2.0 * h);
            let scale = analytic.abs().max(fd.abs()).max(1.0);
            assert!(
                (analytic - fd).abs() / scale < 1e-6,
                "gradient mismatch: analytic {analytic}, fd {fd}"
            );
        };

        for (r, c) in [(0, 0), (1, 2), (3, 3)] {
            let mut m = model.clone();
            m.k_a[[r, c]] += h;
            let up = eval(&m);
            m.k_a[[r, c]] -= 2.0 * h;
            check(grads.k_a[[r, c]], up, eval(&m));
        }
        for (r, c) in [(0, 0), (2, 1)] {
            let mut m = model.clone();
            m.k_b[[r, c]] += h;
            let up = eval(&m);
            m.k_b[[r, c]] -= 2.0 * h;
            check(grads.k_b[[r, c]], up, eval(&m));
        }
        for li in 0..2 {
            for (r, c) in [(0, 0), (1, 2)] {
                let mut m = model.clone();
                m.encoder.layers[li].weight[[r, c]] += h;
                let up = eval(&m);
                m.encoder.layers[li].weight[[r, c]] -= 2.0 * h;
                check(grads.encoder.weights[li][[r, c]], up, eval(&m));

                let mut m = model.clone();
                m.decoder.layers[li].weight[[r, c]] += h;
                let up = eval(&m);
                m.decoder.layers[li].weight[[r, c]] -= 2.0 * h;
                check(grads.decoder.weights[li][[r, c]], up, eval(&m));
            }
            let mut m = model.clone();
            m.encoder.layers[li].bias[1] += h;
            let up = eval(&m);
            m.encoder.layers[li].bias[1] -= 2.0 * h;
            check(grads.encoder.biases[li][1], up, eval(&m));

            let mut m = model.clone();
            m.decoder.layers[li].bias[0] += h;
            let up = eval(&m);
            m.decoder.layers[li].bias[0] -= 2.0 * h;
            check(grads.decoder.biases[li][0], up, eval(&m));
        }
    }
}
