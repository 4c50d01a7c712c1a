//! Split conformal calibration of the gap between true closed-loop rollouts
//! and the model's decoded rollouts, and tube inflation by the result.
//!
//! Two disjoint sample sets are drawn from independent seed streams: a weight
//! set fixes per-entry normalization `lambda[t][j] = 1 / (max |e[t][j]| +
//! sigma)`, then a calibration set is scored by `max lambda |e|` and the
//! conformal quantile of those scores becomes the scale factor `c`. The
//! per-entry error bound `c / lambda` then holds for a fresh rollout with
//! probability at least `1 - delta`, because that rollout's score is
//! exchangeable with the calibration scores.
//!
//! Two sampling modes share this machinery. `fixed_reference` draws only the
//! initial state, so the guarantee is conditional on one reference
//! trajectory. `offline_global` draws a fresh reference and an initial state
//! jointly per sample, so the guarantee covers the deployment distribution
//! of both.

use crate::boundprop::{Provenance, ReachTube, TubeKind};
use crate::controller::{
    riccati_gains, rollout_latent_decoded, rollout_true_closed_loop, GainSchedule, LqrWeights,
    ReferencePlan,
};
use crate::dynamics::{generate_reference, ReferenceConfig, System, Trajectory};
use crate::error::{Error, Result};
use crate::geom::IntervalBox;
use crate::koopman::KoopmanModel;
use crate::seed;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mode label for calibration against one fixed reference trajectory.
pub const MODE_FIXED: &str = "fixed_reference";
/// Mode label for calibration over jointly sampled references and starts.
pub const MODE_OFFLINE_GLOBAL: &str = "offline_global";

/// Regularizer added to the per-entry error maximum before inversion, so
/// entries the weight set never saw move still get a finite weight.
pub const DEFAULT_SIGMA: f64 = 1e-3;

/// Sizes, confidence level, and seeding for one calibration run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalConfig {
    /// Miscoverage level; the guarantee is `1 - delta`.
    pub delta: f64,
    pub sigma: f64,
    /// Scored samples; the quantile is taken over these.
    pub calibration_size: usize,
    /// Samples spent on the normalization weights, disjoint from the above.
    pub weight_sample_size: usize,
    pub seed: u64,
}

impl ConformalConfig {
    /// Defaults everything but the essentials; the weight set gets half the
    /// calibration budget.
    pub fn new(delta: f64, calibration_size: usize, seed: u64) -> Self {
        ConformalConfig {
            delta,
            sigma: DEFAULT_SIGMA,
            calibration_size,
            weight_sample_size: (calibration_size / 2).max(1),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!(
                "delta must lie strictly between 0 and 1, got {}",
                self.delta
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be a positive finite number, got {}",
                self.sigma
            )));
        }
        if self.calibration_size == 0 || self.weight_sample_size == 0 {
            return Err(Error::invalid(
                "calibration and weight sample sizes must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Calibrated error bounds. `lambda` and `e_bar` are `(horizon + 1) x n`
/// matrices over time steps and state dimensions; `e_bar` is infinite
/// everywhere when `c` is.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalBounds {
    pub delta: f64,
    pub sigma: f64,
    pub calibration_size: usize,
    pub weight_sample_size: usize,
    pub mode: String,
    pub c: f64,
    pub lambda: Array2<f64>,
    pub e_bar: Array2<f64>,
}

impl ConformalBounds {
    pub fn horizon(&self) -> usize {
        self.lambda.nrows().saturating_sub(1)
    }

    pub fn state_dim(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn is_bounded(&self) -> bool {
        self.c.is_finite()
    }

    fn assemble(mode: &str, cfg: &ConformalConfig, c: f64, lambda: Array2<f64>) -> Self {
        let e_bar = lambda.mapv(|l| c / l);
        ConformalBounds {
            delta: cfg.delta,
            sigma: cfg.sigma,
            calibration_size: cfg.calibration_size,
            weight_sample_size: cfg.weight_sample_size,
            mode: mode.to_string(),
            c,
            lambda,
            e_bar,
        }
    }
}

/// Per-entry rollout error `x_true[t][j] - x_decoded[t][j]` as a
/// `(horizon + 1) x n` matrix. Row 0 is identically zero because both
/// rollouts start from the same state.
pub fn rollout_error(
    system: &System,
    model: &KoopmanModel,
    plan: &ReferencePlan,
    gains: &GainSchedule,
    x0: &ndarray::Array1<f64>,
) -> Result<Array2<f64>> {
    let truth = rollout_true_closed_loop(system, model, plan, gains, x0)?;
    let decoded = rollout_latent_decoded(model, plan, gains, x0)?;
    let n = model.state_dim();
    let mut e = Array2::zeros((truth.states.len(), n));
    for (t, (xt, xd)) in truth.states.iter().zip(decoded.iter()).enumerate() {
        for j in 0..n {
            e[[t, j]] = xt[j] - xd[j];
        }
    }
    Ok(e)
}

/// Per-entry weights `1 / (max_i |e_i[t][j]| + sigma)` over a sample set.
pub fn normalization_weights(samples: &[Array2<f64>], sigma: f64) -> Result<Array2<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("weight fitting needs samples".to_string()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma must be a positive finite number, got {sigma}"
        )));
    }
    let dim = samples[0].raw_dim();
    let mut e_max: Array2<f64> = Array2::zeros(dim.clone());
    for s in samples {
        if s.raw_dim() != dim {
            return Err(Error::dimension(
                "error samples have mixed shapes".to_string(),
            ));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(
                "error sample contains a non-finite entry".to_string(),
            ));
        }
        e_max.zip_mut_with(s, |m, v| *m = m.max(v.abs()));
    }
    Ok(e_max.mapv(|m| 1.0 / (m + sigma)))
}

/// One score per sample: the largest weighted absolute error across all
/// entries.
pub fn nonconformity_scores(samples: &[Array2<f64>], lambda: &Array2<f64>) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            if s.raw_dim() != lambda.raw_dim() {
                return Err(Error::dimension(
                    "error sample and weights have different shapes".to_string(),
                ));
            }
            let score = s
                .iter()
                .zip(lambda.iter())
                .map(|(e, l)| l * e.abs())
                .fold(0.0f64, f64::max);
            if !score.is_finite() {
                return Err(Error::numerical(
                    "nonconformity score is not finite".to_string(),
                ));
            }
            Ok(score)
        })
        .collect()
}

/// Finite-sample conformal quantile: the `ceil((k + 1)(1 - delta))`-th
/// smallest score, or infinity when that rank exceeds the sample count
/// (too few samples for the requested confidence).
pub fn conformal_quantile(scores: &[f64], delta: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("quantile of an empty score set".to_string()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta must lie strictly between 0 and 1, got {delta}"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numerical("scores contain NaN".to_string()));
    }
    let k = scores.len();
    let rank = ((k + 1) as f64 * (1.0 - delta)).ceil() as usize;
    if rank > k {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN ruled out above"));
    Ok(sorted[rank - 1])
}

fn split_streams(seed_base: u64) -> (u64, u64) {
    (seed::derive(seed_base, 0), seed::derive(seed_base, 1))
}

/// Calibration against one fixed reference: only the initial state varies,
/// drawn uniformly from `x0`.
pub fn calibrate_fixed_reference(
    system: &System,
    model: &KoopmanModel,
    plan: &ReferencePlan,
    gains: &GainSchedule,
    x0: &IntervalBox,
    cfg: &ConformalConfig,
) -> Result<ConformalBounds> {
    cfg.validate()?;
    let (weight_seed, cal_seed) = split_streams(cfg.seed);
    let draw = |stream: u64, count: usize| -> Result<Vec<Array2<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        (0..count)
            .map(|_| rollout_error(system, model, plan, gains, &x0.sample_uniform(&mut rng)?))
            .collect()
    };
    let lambda = normalization_weights(&draw(weight_seed, cfg.weight_sample_size)?, cfg.sigma)?;
    let scores = nonconformity_scores(&draw(cal_seed, cfg.calibration_size)?, &lambda)?;
    let c = conformal_quantile(&scores, cfg.delta)?;
    Ok(ConformalBounds::assemble(MODE_FIXED, cfg, c, lambda))
}

/// Calibration over the deployment distribution: each sample draws a fresh
/// reference from `reference` (reseeded per sample) and an initial state
/// from a ball of radius `x0_radius` around that reference's start.
///
/// The gain schedule depends only on the model and weights, so one schedule
/// serves every sampled reference.
pub fn calibrate_offline_global(
    system: &System,
    model: &KoopmanModel,
    reference: &ReferenceConfig,
    weights: &LqrWeights,
    x0_radius: f64,
    cfg: &ConformalConfig,
) -> Result<ConformalBounds> {
    cfg.validate()?;
    if !(x0_radius > 0.0 && x0_radius.is_finite()) {
        return Err(Error::invalid(format!(
            "initial ball radius must be positive and finite, got {x0_radius}"
        )));
    }
    let gains = riccati_gains(&model.k_a, &model.k_b, weights, reference.horizon)?;
    let (weight_seed, cal_seed) = split_streams(cfg.seed);
    let draw = |stream: u64, count: usize| -> Result<Vec<Array2<f64>>> {
        (0..count)
            .map(|i| {
                let mut ref_cfg = reference.clone();
                ref_cfg.seed = seed::derive(stream, 2 * i as u64);
                let x_ref = generate_reference(system, &ref_cfg)?;
                let plan = ReferencePlan::new(model, x_ref)?;
                let x0_box = IntervalBox::ball(&plan.x_ref.states[0], x0_radius)?;
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed::derive(stream, 2 * i as u64 + 1));
                rollout_error(system, model, &plan, &gains, &x0_box.sample_uniform(&mut rng)?)
            })
            .collect()
    };
    let lambda = normalization_weights(&draw(weight_seed, cfg.weight_sample_size)?, cfg.sigma)?;
    let scores = nonconformity_scores(&draw(cal_seed, cfg.calibration_size)?, &lambda)?;
    let c = conformal_quantile(&scores, cfg.delta)?;
    Ok(ConformalBounds::assemble(MODE_OFFLINE_GLOBAL, cfg, c, lambda))
}

/// Grows each face of a model-sound tube by the calibrated margin for its
/// time step and dimension, yielding a tube for the true closed loop.
pub fn inflate(tube: &ReachTube, bounds: &ConformalBounds) -> Result<ReachTube> {
    tube.validate()?;
    if tube.kind != TubeKind::Krs {
        return Err(Error::invalid(
            "only an uninflated tube can be inflated".to_string(),
        ));
    }
    if bounds.e_bar.nrows() != tube.boxes.len() || bounds.e_bar.ncols() != tube.state_dim() {
        return Err(Error::dimension(format!(
            "margins are {}x{} but the tube has {} boxes of dimension {}",
            bounds.e_bar.nrows(),
            bounds.e_bar.ncols(),
            tube.boxes.len(),
            tube.state_dim()
        )));
    }
    let boxes = tube
        .boxes
        .iter()
        .enumerate()
        .map(|(t, b)| b.inflate(&bounds.e_bar.row(t).to_owned()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReachTube {
        kind: TubeKind::Ckrs,
        boxes,
        provenance: Provenance {
            delta: Some(bounds.delta),
            unbounded: !bounds.is_bounded(),
            ..tube.provenance.clone()
        },
    })
}

/// Fraction of trajectories whose every state lies in the matching tube box.
pub fn empirical_coverage(tube: &ReachTube, trajectories: &[Trajectory]) -> Result<f64> {
    tube.validate()?;
    if trajectories.is_empty() {
        return Err(Error::invalid(
            "coverage needs at least one trajectory".to_string(),
        ));
    }
    for traj in trajectories {
        if traj.states.len() != tube.boxes.len() || traj.state_dim() != tube.state_dim() {
            return Err(Error::dimension(
                "trajectory and tube disagree on horizon or dimension".to_string(),
            ));
        }
    }
    let inside = trajectories
        .iter()
        .filter(|traj| tube.contains_states(&traj.states, 0.0))
        .count();
    Ok(inside as f64 / trajectories.len() as f64)
}

/// Beta posterior over a coverage probability after `successes` contained
/// trajectories out of `trials`, under a uniform prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPosterior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPosterior {
    pub fn from_trials(successes: usize, trials: usize) -> Result<Self> {
        if successes > trials {
            return Err(Error::invalid(format!(
                "{successes} successes out of {trials} trials"
            )));
        }
        Ok(BetaPosterior {
            alpha: (successes + 1) as f64,
            beta: (trials - successes + 1) as f64,
        })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    /// Posterior mode, which is the raw success fraction; 0.5 for the flat
    /// zero-trial posterior.
    pub fn mode(&self) -> f64 {
        let denom = self.alpha + self.beta - 2.0;
        if denom <= 0.0 {
            0.5
        } else {
            (self.alpha - 1.0) / denom
        }
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundprop::compute_krs;
    use crate::controller::LqrWeights;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    #[test]
    fn quantile_matches_hand_ranks() {
        let scores = [3.0, 1.0, 2.0];
        // rank = ceil(4 * 0.5) = 2 -> second smallest
        assert_eq!(conformal_quantile(&scores, 0.5).unwrap(), 2.0);
        // rank = ceil(4 * 0.75) = 3 -> largest
        assert_eq!(conformal_quantile(&scores, 0.25).unwrap(), 3.0);
        // rank = ceil(4 * 0.95) = 4 > 3 -> unbounded
        assert!(conformal_quantile(&scores, 0.05).unwrap().is_infinite());
        assert_eq!(conformal_quantile(&[5.0], 0.5).unwrap(), 5.0);
        assert!(conformal_quantile(&[5.0], 0.4).unwrap().is_infinite());
    }

    #[test]
    fn quantile_rejects_bad_inputs() {
        assert!(conformal_quantile(&[], 0.1).is_err());
        assert!(conformal_quantile(&[1.0], 0.0).is_err());
        assert!(conformal_quantile(&[1.0], 1.0).is_err());
        assert!(conformal_quantile(&[f64::NAN], 0.1).is_err());
    }

    #[test]
    fn weights_invert_the_error_envelope() {
        let samples = vec![array![[1.0], [-2.0]], array![[0.5], [3.0]]];
        let lambda = normalization_weights(&samples, 1e-3).unwrap();
        assert_abs_diff_eq!(lambda[[0, 0]], 1.0 / 1.001, epsilon = 1e-15);
        assert_abs_diff_eq!(lambda[[1, 0]], 1.0 / 3.001, epsilon = 1e-15);

        let scores = nonconformity_scores(&[array![[2.0], [1.0]]], &lambda).unwrap();
        assert_abs_diff_eq!(scores[0], 2.0 / 1.001, epsilon = 1e-15);

        assert!(normalization_weights(&[], 1e-3).is_err());
        assert!(normalization_weights(&samples, 0.0).is_err());
        assert!(normalization_weights(&vec![array![[1.0, 2.0]]], 1e-3)
            .map(|l| nonconformity_scores(&samples, &l))
            .unwrap()
            .is_err());
    }

    #[test]
    fn beta_posterior_summaries() {
        let p = BetaPosterior::from_trials(9, 10).unwrap();
        assert_eq!((p.alpha, p.beta), (10.0, 2.0));
        assert_abs_diff_eq!(p.mean(), 10.0 / 12.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.mode(), 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(p.variance(), 20.0 / (144.0 * 13.0), epsilon = 1e-15);

        let flat = BetaPosterior::from_trials(0, 0).unwrap();
        assert_eq!(flat.mode(), 0.5);
        assert_eq!(flat.mean(), 0.5);
        assert_abs_diff_eq!(flat.variance(), 1.0 / 12.0, epsilon = 1e-15);

        assert!(BetaPosterior::from_trials(3, 2).is_err());
    }

    fn linear_fixture(
        a: ndarray::Array2<f64>,
        model_a: ndarray::Array2<f64>,
        horizon: usize,
    ) -> (System, KoopmanModel, ReferencePlan, GainSchedule, IntervalBox) {
        let b = array![[0.1, 0.0], [0.02, 0.15]];
        let system = System::linear(1.0, a, b.clone()).unwrap();
        let model = KoopmanModel::exact_linear(model_a, b).unwrap();
        let x_ref = generate_reference(
            &system,
            &ReferenceConfig {
                horizon,
                smoothing_window: 3,
                control_bounds: vec![(-0.4, 0.4), (-0.4, 0.4)],
                init_box: IntervalBox::ball(&array![0.0, 0.0], 0.1).unwrap(),
                seed: 21,
            },
        )
        .unwrap();
        let plan = ReferencePlan::new(&model, x_ref).unwrap();
        let gains = riccati_gains(
            &model.k_a,
            &model.k_b,
            &LqrWeights::default_for_dims(2, 2),
            horizon,
        )
        .unwrap();
        let x0 = IntervalBox::ball(&plan.x_ref.states[0], 0.05).unwrap();
        (system, model, plan, gains, x0)
    }

    /// An exact model has zero rollout error, so the quantile is zero, the
    /// margins vanish, and inflation is the identity on the boxes.
    #[test]
    fn exact_model_calibrates_to_zero_margin() {
        let a = array![[0.9, 0.05], [-0.02, 0.85]];
        let (system, model, plan, gains, x0) = linear_fixture(a.clone(), a, 20);
        let cfg = ConformalConfig::new(0.1, 40, 7);
        let bounds =
            calibrate_fixed_reference(&system, &model, &plan, &gains, &x0, &cfg).unwrap();
        assert_eq!(bounds.c, 0.0);
        assert_eq!(bounds.mode, MODE_FIXED);
        assert_eq!(bounds.lambda.nrows(), 21);
        assert!(bounds.e_bar.iter().all(|&e| e == 0.0));
        assert!(bounds.is_bounded());

        let krs = compute_krs(&model, &plan, &gains, &x0).unwrap();
        let ckrs = inflate(&krs, &bounds).unwrap();
        assert_eq!(ckrs.kind, TubeKind::Ckrs);
        assert_eq!(ckrs.boxes, krs.boxes);
        assert_eq!(ckrs.provenance.delta, Some(0.1));
        assert!(!ckrs.provenance.unbounded);
    }

    /// A deliberately wrong model produces nonzero margins, and the inflated
    /// tube recovers coverage of the true closed loop that the uninflated
    /// tube can miss.
    #[test]
    fn inflation_restores_coverage_under_model_mismatch() {
        let a_true = array![[0.9, 0.1], [0.0, 0.8]];
        let a_model = array![[0.93, 0.07], [0.02, 0.83]];
        let (system, model, plan, gains, x0) = linear_fixture(a_true, a_model, 25);
        let cfg = ConformalConfig::new(0.2, 60, 11);
        let bounds =
            calibrate_fixed_reference(&system, &model, &plan, &gains, &x0, &cfg).unwrap();
        assert!(bounds.c > 0.0 && bounds.is_bounded());

        let krs = compute_krs(&model, &plan, &gains, &x0).unwrap();
        let ckrs = inflate(&krs, &bounds).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(99, 2));
        let rollouts: Vec<Trajectory> = (0..200)
            .map(|_| {
                let start = x0.sample_uniform(&mut rng).unwrap();
                rollout_true_closed_loop(&system, &model, &plan, &gains, &start).unwrap()
            })
            .collect();
        let krs_cov = empirical_coverage(&krs, &rollouts).unwrap();
        let ckrs_cov = empirical_coverage(&ckrs, &rollouts).unwrap();
        assert!(ckrs_cov >= krs_cov);
        assert!(
            ckrs_cov >= 0.75,
            "inflated tube covered only {ckrs_cov} at delta 0.2"
        );
    }

    #[test]
    fn too_small_calibration_set_goes_unbounded() {
        let a = array![[0.9, 0.05], [-0.02, 0.85]];
        let (system, model, plan, gains, x0) = linear_fixture(a.clone(), a, 5);
        // rank = ceil(3 * 0.95) = 3 > 2, so the quantile must blow up.
        let cfg = ConformalConfig::new(0.05, 2, 3);
        let bounds =
            calibrate_fixed_reference(&system, &model, &plan, &gains, &x0, &cfg).unwrap();
        assert!(!bounds.is_bounded());
        assert!(bounds.e_bar.iter().all(|e| e.is_infinite()));

        let krs = compute_krs(&model, &plan, &gains, &x0).unwrap();
        let ckrs = inflate(&krs, &bounds).unwrap();
        assert!(ckrs.provenance.unbounded);
        assert!(!ckrs.boxes[1].is_finite());
    }

    #[test]
    fn inflate_applies_row_t_to_box_t() {
        let tube = ReachTube {
            kind: TubeKind::Krs,
            boxes: vec![
                IntervalBox::ball(&array![0.0, 0.0], 1.0).unwrap(),
                IntervalBox::ball(&array![0.0, 0.0], 1.0).unwrap(),
            ],
            provenance: Provenance {
                reference_id: "r".to_string(),
                model_hash: "m".to_string(),
                delta: None,
                unbounded: false,
            },
        };
        let bounds = ConformalBounds {
            delta: 0.1,
            sigma: 1e-3,
            calibration_size: 10,
            weight_sample_size: 5,
            mode: MODE_FIXED.to_string(),
            c: 1.0,
            lambda: array![[1.0, 1.0], [0.5, 0.1]],
            e_bar: array![[1.0, 1.0], [2.0, 10.0]],
        };
        let out = inflate(&tube, &bounds).unwrap();
        assert_eq!(out.boxes[0].width(), array![4.0, 4.0]);
        assert_eq!(out.boxes[1].width(), array![6.0, 22.0]);
        // A second inflation must be refused.
        assert!(inflate(&out, &bounds).is_err());

        let mut short = bounds.clone();
        short.e_bar = array![[1.0, 1.0]];
        assert!(inflate(&tube, &short).is_err());
    }

    #[test]
    fn coverage_counts_fully_contained_rollouts() {
        let tube = ReachTube {
            kind: TubeKind::Krs,
            boxes: vec![
                IntervalBox::ball(&array![0.0], 1.0).unwrap(),
                IntervalBox::ball(&array![0.0], 1.0).unwrap(),
            ],
            provenance: Provenance {
                reference_id: "r".to_string(),
                model_hash: "m".to_string(),
                delta: None,
                unbounded: false,
            },
        };
        let mk = |a: f64, b: f64| Trajectory {
            states: vec![array![a], array![b]],
            controls: vec![Array1::zeros(1)],
        };
        let trajs = vec![mk(0.0, 0.5), mk(0.9, -0.9), mk(0.0, 1.5)];
        assert_abs_diff_eq!(
            empirical_coverage(&tube, &trajs).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-15
        );
        assert!(empirical_coverage(&tube, &[]).is_err());
        let wrong = vec![mk(0.0, 0.0), mk(0.0, 0.0), mk(0.0, 0.0)];
        let mut too_long = wrong.clone();
        too_long[0].states.push(array![0.0]);
        too_long[0].controls.push(Array1::zeros(1));
        assert!(empirical_coverage(&tube, &too_long).is_err());
    }

    #[test]
    fn offline_global_mode_is_deterministic_and_exact_for_exact_models() {
        let a = array![[0.9, 0.05], [-0.02, 0.85]];
        let b = array![[0.1, 0.0], [0.02, 0.15]];
        let system = System::linear(1.0, a.clone(), b.clone()).unwrap();
        let model = KoopmanModel::exact_linear(a, b).unwrap();
        let ref_cfg = ReferenceConfig {
            horizon: 10,
            smoothing_window: 2,
            control_bounds: vec![(-0.3, 0.3), (-0.3, 0.3)],
            init_box: IntervalBox::ball(&array![0.0, 0.0], 0.1).unwrap(),
            seed: 0,
        };
        let weights = LqrWeights::default_for_dims(2, 2);
        let cfg = ConformalConfig::new(0.1, 30, 13);
        let run = || {
            calibrate_offline_global(&system, &model, &ref_cfg, &weights, 0.05, &cfg).unwrap()
        };
        let first = run();
        assert_eq!(first.mode, MODE_OFFLINE_GLOBAL);
        assert_eq!(first.c, 0.0);
        assert_eq!(first, run());

        assert!(
            calibrate_offline_global(&system, &model, &ref_cfg, &weights, 0.0, &cfg).is_err()
        );
    }

    #[test]
    fn config_validation_rejects_degenerate_settings() {
        let mut cfg = ConformalConfig::new(0.1, 10, 0);
        assert_eq!(cfg.weight_sample_size, 5);
        cfg.validate().unwrap();
        cfg.delta = 0.0;
        assert!(cfg.validate().is_err());
        cfg.delta = 0.1;
        cfg.sigma = -1.0;
        assert!(cfg.validate().is_err());
        cfg.sigma = 1e-3;
        cfg.calibration_size = 0;
        assert!(cfg.validate().is_err());
    }
}
