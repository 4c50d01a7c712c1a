//! End-to-end experiment orchestration: one config describes data
//! generation, training, reference planning, calibration, and tube
//! construction, and one seed makes the whole chain reproducible.
//!
//! Every stage draws from its own seed stream derived from the experiment
//! seed, so changing one stage's sample count leaves the others' randomness
//! untouched.

pub mod plot;

use crate::boundprop::{compute_krs, ReachTube};
use crate::conformal::{
    calibrate_fixed_reference, calibrate_offline_global, empirical_coverage, BetaPosterior,
    ConformalBounds, ConformalConfig, DEFAULT_SIGMA, MODE_FIXED, MODE_OFFLINE_GLOBAL,
};
use crate::controller::{riccati_gains, rollout_true_closed_loop, GainSchedule, LqrWeights, ReferencePlan};
use crate::dynamics::{generate_reference, ReferenceConfig, System, Trajectory};
use crate::error::{Error, Result};
use crate::geom::IntervalBox;
use crate::io;
use crate::koopman::{train, KoopmanModel, TrainingConfig};
use crate::seed;
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::time::Instant;

/// Seed stream indices, one per pipeline stage.
mod streams {
    pub const DATA: u64 = 0;
    pub const TRAINING: u64 = 1;
    pub const REFERENCE: u64 = 2;
    pub const CALIBRATION: u64 = 3;
    pub const EVALUATION: u64 = 4;
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

fn default_mode() -> String {
    MODE_FIXED.to_string()
}

fn default_q_scale() -> f64 {
    1.0
}

fn default_r_scale() -> f64 {
    0.1
}

/// How much training data to sample, using the reference generator with its
/// own horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSettings {
    pub trajectories: usize,
    pub horizon: usize,
}

/// Reference generator settings; the initial-state box is spelled out as two
/// vectors so configs stay plain JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSettings {
    pub horizon: usize,
    pub smoothing_window: usize,
    pub control_bounds: Vec<(f64, f64)>,
    pub init_lower: Vec<f64>,
    pub init_upper: Vec<f64>,
}

impl ReferenceSettings {
    pub fn to_config(&self, seed: u64) -> Result<ReferenceConfig> {
        Ok(ReferenceConfig {
            horizon: self.horizon,
            smoothing_window: self.smoothing_window,
            control_bounds: self.control_bounds.clone(),
            init_box: IntervalBox::new(
                Array1::from_vec(self.init_lower.clone()),
                Array1::from_vec(self.init_upper.clone()),
            )?,
            seed,
        })
    }

    fn with_horizon(&self, horizon: usize) -> Self {
        let mut s = self.clone();
        s.horizon = horizon;
        s
    }
}

/// Scalar multiples of the identity for the tracking cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrSettings {
    #[serde(default = "default_q_scale")]
    pub q_scale: f64,
    #[serde(default = "default_r_scale")]
    pub r_scale: f64,
    /// Terminal weight scale; defaults to `q_scale`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_terminal_scale: Option<f64>,
}

impl Default for LqrSettings {
    fn default() -> Self {
        LqrSettings {
            q_scale: default_q_scale(),
            r_scale: default_r_scale(),
            q_terminal_scale: None,
        }
    }
}

impl LqrSettings {
    pub fn to_weights(&self, latent_dim: usize, control_dim: usize) -> Result<LqrWeights> {
        let qt = self.q_terminal_scale.unwrap_or(self.q_scale);
        LqrWeights::new(
            ndarray::Array2::eye(latent_dim) * self.q_scale,
            ndarray::Array2::eye(control_dim) * self.r_scale,
            ndarray::Array2::eye(latent_dim) * qt,
        )
    }
}

/// Calibration settings; the weight set defaults to half the calibration
/// budget and the mode to the fixed-reference guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConformalSettings {
    pub delta: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub calibration_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_sample_size: Option<usize>,
    #[serde(default = "default_mode")]
    pub mode: String,
}

impl ConformalSettings {
    fn to_config(&self, seed: u64) -> ConformalConfig {
        ConformalConfig {
            delta: self.delta,
            sigma: self.sigma,
            calibration_size: self.calibration_size,
            weight_sample_size: self
                .weight_sample_size
                .unwrap_or_else(|| (self.calibration_size / 2).max(1)),
            seed,
        }
    }
}

/// How many fresh rollouts the evaluation stage spends on a coverage
/// estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSettings {
    pub test_rollouts: usize,
}

/// A complete experiment description. The embedded training seed is ignored:
/// every stage reseeds from the experiment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub data: DataSettings,
    pub training: TrainingConfig,
    pub reference: ReferenceSettings,
    #[serde(default)]
    pub lqr: LqrSettings,
    pub conformal: ConformalSettings,
    /// Half-width of the initial-state box, centered on the reference start.
    pub x0_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationSettings>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let system = System::by_name(&self.system)?;
        self.training.validate(system.state_dim(), self.data.horizon)?;
        if self.data.trajectories == 0 {
            return Err(Error::invalid("need at least one training trajectory".to_string()));
        }
        if self.reference.control_bounds.len() != system.control_dim()
            || self.reference.init_lower.len() != system.state_dim()
        {
            return Err(Error::dimension(format!(
                "reference settings do not fit a {} system",
                self.system
            )));
        }
        if !(self.x0_radius > 0.0 && self.x0_radius.is_finite()) {
            return Err(Error::invalid(format!(
                "x0_radius must be positive and finite, got {}",
                self.x0_radius
            )));
        }
        match self.conformal.mode.as_str() {
            MODE_FIXED | MODE_OFFLINE_GLOBAL => {}
            other => {
                return Err(Error::invalid(format!(
                    "unknown calibration mode {other:?}"
                )))
            }
        }
        self.conformal.to_config(0).validate()?;
        if let Some(eval) = &self.evaluation {
            if eval.test_rollouts == 0 {
                return Err(Error::invalid(
                    "evaluation needs at least one rollout".to_string(),
                ));
            }
        }
        Ok(())
    }

    /// Ready-to-run settings for one of the built-in systems.
    pub fn default_for(system: &str) -> Result<Self> {
        let (latent, hidden, reference, data_horizon, x0_radius) = match system {
            "unicycle" => (
                10,
                vec![32, 32],
                ReferenceSettings {
                    horizon: 100,
                    smoothing_window: 5,
                    control_bounds: vec![(0.2, 1.0), (-0.8, 0.8)],
                    init_lower: vec![-0.2, -0.2, -0.3],
                    init_upper: vec![0.2, 0.2, 0.3],
                },
                60,
                0.05,
            ),
            "planar_quad" => (
                12,
                vec![32, 32],
                ReferenceSettings {
                    horizon: 100,
                    smoothing_window: 7,
                    control_bounds: vec![(4.405, 5.405), (-0.02, 0.02)],
                    init_lower: vec![-0.1, -0.1, -0.05, -0.05, -0.05, -0.02],
                    init_upper: vec![0.1, 0.1, 0.05, 0.05, 0.05, 0.02],
                },
                60,
                0.02,
            ),
            "quad3d" => (
                16,
                vec![64, 64],
                ReferenceSettings {
                    horizon: 80,
                    smoothing_window: 9,
                    control_bounds: vec![
                        (8.81, 10.81),
                        (-0.05, 0.05),
                        (-0.05, 0.05),
                        (-0.05, 0.05),
                    ],
                    init_lower: vec![
                        -0.1, -0.1, -0.1, -0.05, -0.05, -0.05, -0.05, -0.05, -0.05, -0.02,
                        -0.02, -0.02,
                    ],
                    init_upper: vec![
                        0.1, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.02, 0.02, 0.02,
                    ],
                },
                50,
                0.01,
            ),
            other => {
                return Err(Error::invalid(format!(
                    "no default experiment for system {other:?}"
                )))
            }
        };
        Ok(ExperimentConfig {
            system: system.to_string(),
            seed: Some(0),
            data: DataSettings {
                trajectories: 40,
                horizon: data_horizon,
            },
            training: TrainingConfig {
                latent_dim: latent,
                hidden,
                activation: crate::koopman::Activation::Relu,
                lambda1: 1.0,
                lambda2: 1.0,
                horizon: 10,
                epochs: 40,
                batch_size: 16,
                learning_rate: 0.001,
                momentum: 0.9,
                weight_decay: 1e-5,
                seed: 0,
            },
            reference,
            lqr: LqrSettings::default(),
            conformal: ConformalSettings {
                delta: 0.1,
                sigma: DEFAULT_SIGMA,
                calibration_size: 100,
                weight_sample_size: None,
                mode: default_mode(),
            },
            x0_radius,
            evaluation: Some(EvaluationSettings { test_rollouts: 200 }),
        })
    }
}

/// Identity of a config with its seed resolved, as a short hash over the
/// canonical serialization.
pub fn config_hash(cfg: &ExperimentConfig, seed: u64) -> String {
    let mut pinned = cfg.clone();
    pinned.seed = Some(seed);
    pinned.training.seed = 0;
    let text = serde_json::to_string(&pinned).expect("config serialization cannot fail");
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..6])
}

/// Mean over time steps of the log-volume `sum_j ln(width_j)`, widths
/// floored at 1e-12 so degenerate faces stay finite.
pub fn avg_log_volume(tube: &ReachTube) -> f64 {
    if tube.boxes.is_empty() {
        return 0.0;
    }
    let total: f64 = tube
        .boxes
        .iter()
        .map(|b| b.width().iter().map(|w| w.max(1e-12).ln()).sum::<f64>())
        .sum();
    total / tube.boxes.len() as f64
}

/// The seed stream the evaluation stage draws from, for callers that
/// estimate coverage outside [`run_pipeline`].
pub fn evaluation_seed(experiment_seed: u64) -> u64 {
    seed::derive(experiment_seed, streams::EVALUATION)
}

/// Coverage estimate from fresh rollouts, with a Beta posterior summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageReport {
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    pub posterior_mode: f64,
    pub posterior_variance: f64,
}

/// Rolls out the true closed loop from fresh initial states and checks
/// containment in the tube.
pub fn evaluate_coverage(
    system: &System,
    model: &KoopmanModel,
    plan: &ReferencePlan,
    gains: &GainSchedule,
    x0: &IntervalBox,
    tube: &ReachTube,
    rollouts: usize,
    eval_seed: u64,
) -> Result<CoverageReport> {
    use rand::SeedableRng;
    if rollouts == 0 {
        return Err(Error::invalid("coverage needs at least one rollout".to_string()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(eval_seed);
    let trajectories = (0..rollouts)
        .map(|_| {
            let start = x0.sample_uniform(&mut rng)?;
            rollout_true_closed_loop(system, model, plan, gains, &start)
        })
        .collect::<Result<Vec<Trajectory>>>()?;
    let rate = empirical_coverage(tube, &trajectories)?;
    let successes = (rate * rollouts as f64).round() as usize;
    let posterior = BetaPosterior::from_trials(successes, rollouts)?;
    Ok(CoverageReport {
        trials: rollouts,
        successes,
        rate,
        posterior_mode: posterior.mode(),
        posterior_variance: posterior.variance(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Summary of one full pipeline run. Infinite quantities are encoded by the
/// `c_unbounded` flag and an absent inflated log-volume, never by literal
/// infinities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub system: String,
    pub seed: u64,
    pub config_hash: String,
    pub model_hash: String,
    pub reference_id: String,
    pub final_training_loss: f64,
    pub conformal_c: f64,
    pub c_unbounded: bool,
    pub krs_avg_log_volume: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ckrs_avg_log_volume: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageReport>,
    pub timings: Vec<StageTiming>,
}

/// Everything a pipeline run produces, in memory.
#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub model: KoopmanModel,
    pub plan: ReferencePlan,
    pub gains: GainSchedule,
    pub x0: IntervalBox,
    pub bounds: ConformalBounds,
    pub krs: ReachTube,
    pub ckrs: ReachTube,
    pub report: RunReport,
}

/// Samples training data with the reference generator, one derived seed per
/// trajectory.
pub fn generate_training_data(
    system: &System,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let stream = seed::derive(seed, streams::DATA);
    let settings = cfg.reference.with_horizon(cfg.data.horizon);
    (0..cfg.data.trajectories)
        .map(|i| {
            let ref_cfg = settings.to_config(seed::derive(stream, i as u64))?;
            generate_reference(system, &ref_cfg)
        })
        .collect()
}

/// Trains a model for the experiment from freshly sampled data.
pub fn train_model(system: &System, cfg: &ExperimentConfig, seed: u64) -> Result<KoopmanModel> {
    let data = generate_training_data(system, cfg, seed)?;
    let mut training = cfg.training.clone();
    training.seed = seed::derive(seed, streams::TRAINING);
    train(&data, &training)
}

/// The reference trajectory, encoded plan, and gain schedule for a run.
pub fn plan_and_gains(
    system: &System,
    model: &KoopmanModel,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(ReferencePlan, GainSchedule)> {
    let ref_cfg = cfg
        .reference
        .to_config(seed::derive(seed, streams::REFERENCE))?;
    let x_ref = generate_reference(system, &ref_cfg)?;
    let plan = ReferencePlan::new(model, x_ref)?;
    let weights = cfg.lqr.to_weights(model.latent_dim(), model.control_dim())?;
    let gains = riccati_gains(&model.k_a, &model.k_b, &weights, plan.horizon())?;
    Ok((plan, gains))
}

/// Calibrates error margins for the experiment in its configured mode.
pub fn calibrate(
    system: &System,
    model: &KoopmanModel,
    plan: &ReferencePlan,
    gains: &GainSchedule,
    x0: &IntervalBox,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<ConformalBounds> {
    let conformal_cfg = cfg
        .conformal
        .to_config(seed::derive(seed, streams::CALIBRATION));
    match cfg.conformal.mode.as_str() {
        MODE_FIXED => {
            calibrate_fixed_reference(system, model, plan, gains, x0, &conformal_cfg)
        }
        MODE_OFFLINE_GLOBAL => {
            let ref_cfg = cfg.reference.to_config(0)?;
            let weights = cfg.lqr.to_weights(model.latent_dim(), model.control_dim())?;
            calibrate_offline_global(
                system,
                model,
                &ref_cfg,
                &weights,
                cfg.x0_radius,
                &conformal_cfg,
            )
        }
        other => Err(Error::invalid(format!("unknown calibration mode {other:?}"))),
    }
}

/// Runs the full chain: data, training, planning, calibration, tube
/// construction, inflation, and (when configured) a coverage estimate.
pub fn run_pipeline(cfg: &ExperimentConfig, seed: u64) -> Result<PipelineOutputs> {
    cfg.validate()?;
    let system = System::by_name(&cfg.system)?;
    let mut timings = Vec::new();
    let mut timed = |stage: &str, start: Instant| {
        timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
    };

    let t = Instant::now();
    let model = train_model(&system, cfg, seed)?;
    timed("train", t);

    let t = Instant::now();
    let (plan, gains) = plan_and_gains(&system, &model, cfg, seed)?;
    let x0 = IntervalBox::ball(&plan.x_ref.states[0], cfg.x0_radius)?;
    timed("plan", t);

    let t = Instant::now();
    let bounds = calibrate(&system, &model, &plan, &gains, &x0, cfg, seed)?;
    timed("calibrate", t);

    let t = Instant::now();
    let krs = compute_krs(&model, &plan, &gains, &x0)?;
    let ckrs = crate::conformal::inflate(&krs, &bounds)?;
    timed("reach", t);

    let coverage = match &cfg.evaluation {
        Some(eval) => {
            let t = Instant::now();
            let report = evaluate_coverage(
                &system,
                &model,
                &plan,
                &gains,
                &x0,
                &ckrs,
                eval.test_rollouts,
                seed::derive(seed, streams::EVALUATION),
            )?;
            timed("evaluate", t);
            Some(report)
        }
        None => None,
    };

    let report = RunReport {
        system: cfg.system.clone(),
        seed,
        config_hash: config_hash(cfg, seed),
        model_hash: io::model_content_hash(&model),
        reference_id: io::trajectory_content_hash(&plan.x_ref),
        final_training_loss: model.meta.as_ref().map_or(f64::NAN, |m| m.final_loss),
        conformal_c: if bounds.c.is_finite() { bounds.c } else { 0.0 },
        c_unbounded: !bounds.c.is_finite(),
        krs_avg_log_volume: avg_log_volume(&krs),
        ckrs_avg_log_volume: if bounds.c.is_finite() {
            Some(avg_log_volume(&ckrs))
        } else {
            None
        },
        coverage,
        timings,
    };

    Ok(PipelineOutputs {
        model,
        plan,
        gains,
        x0,
        bounds,
        krs,
        ckrs,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_for("unicycle").unwrap();
        cfg.data = DataSettings {
            trajectories: 6,
            horizon: 24,
        };
        cfg.training.epochs = 2;
        cfg.training.horizon = 6;
        cfg.training.latent_dim = 5;
        cfg.training.hidden = vec![16];
        cfg.reference.horizon = 20;
        cfg.conformal.calibration_size = 12;
        cfg.conformal.delta = 0.2;
        cfg.evaluation = Some(EvaluationSettings { test_rollouts: 20 });
        cfg
    }

    #[test]
    fn default_configs_validate_for_every_system() {
        for name in ["unicycle", "planar_quad", "quad3d"] {
            let cfg = ExperimentConfig::default_for(name).unwrap();
            cfg.validate().unwrap();
        }
        assert!(ExperimentConfig::default_for("pendulum").is_err());
    }

    #[test]
    fn validation_catches_inconsistent_settings() {
        let mut cfg = tiny_config();
        cfg.data.horizon = 3;
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config();
        cfg.reference.control_bounds.pop();
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config();
        cfg.x0_radius = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config();
        cfg.conformal.mode = "bootstrap".to_string();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_hash_pins_seed_and_content() {
        let cfg = tiny_config();
        assert_eq!(config_hash(&cfg, 1), config_hash(&cfg, 1));
        assert_ne!(config_hash(&cfg, 1), config_hash(&cfg, 2));
        let mut other = cfg.clone();
        other.conformal.delta = 0.15;
        assert_ne!(config_hash(&cfg, 1), config_hash(&other, 1));
        // The embedded training seed is dead weight and must not leak in.
        let mut reseeded = cfg.clone();
        reseeded.training.seed = 99;
        assert_eq!(config_hash(&cfg, 1), config_hash(&reseeded, 1));
    }

    #[test]
    fn settings_deserialize_with_defaults() {
        let text = r#"{"delta":0.1,"calibration_size":50}"#;
        let s: ConformalSettings = serde_json::from_str(text).unwrap();
        assert_eq!(s.sigma, DEFAULT_SIGMA);
        assert_eq!(s.mode, MODE_FIXED);
        assert_eq!(s.to_config(0).weight_sample_size, 25);

        let lqr: LqrSettings = serde_json::from_str("{}").unwrap();
        assert_eq!(lqr.q_scale, 1.0);
        assert_eq!(lqr.r_scale, 0.1);

        assert!(serde_json::from_str::<ConformalSettings>(
            r#"{"delta":0.1,"calibration_size":50,"extra":1}"#
        )
        .is_err());
    }

    #[test]
    fn log_volume_matches_hand_computation() {
        use crate::boundprop::{Provenance, TubeKind};
        use ndarray::array;
        let tube = ReachTube {
            kind: TubeKind::Krs,
            boxes: vec![
                IntervalBox::new(array![0.0, 0.0], array![1.0, 1.0]).unwrap(),
                IntervalBox::new(array![0.0, 0.0], array![std::f64::consts::E, 1.0]).unwrap(),
            ],
            provenance: Provenance {
                reference_id: String::new(),
                model_hash: String::new(),
                delta: None,
                unbounded: false,
            },
        };
        // Box 0 contributes 0, box 1 contributes 1; the mean is 0.5.
        assert_abs_diff_eq!(avg_log_volume(&tube), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn pipeline_runs_end_to_end_and_is_deterministic() {
        let cfg = tiny_config();
        let out = run_pipeline(&cfg, 5).unwrap();
        assert_eq!(out.krs.boxes.len(), cfg.reference.horizon + 1);
        assert_eq!(out.ckrs.boxes.len(), out.krs.boxes.len());
        assert_eq!(out.report.system, "unicycle");
        assert_eq!(out.report.seed, 5);
        assert!(out.report.final_training_loss.is_finite());
        assert!(!out.report.c_unbounded);
        let ckrs_vol = out.report.ckrs_avg_log_volume.unwrap();
        assert!(
            ckrs_vol >= out.report.krs_avg_log_volume,
            "inflation cannot shrink the tube"
        );
        let coverage = out.report.coverage.as_ref().unwrap();
        assert_eq!(coverage.trials, 20);
        assert!(coverage.rate >= 0.0 && coverage.rate <= 1.0);
        assert!(!out.report.timings.is_empty());

        let again = run_pipeline(&cfg, 5).unwrap();
        assert_eq!(again.model, out.model);
        assert_eq!(again.bounds, out.bounds);
        assert_eq!(again.krs.boxes, out.krs.boxes);
        assert_eq!(
            again.report.coverage.as_ref().unwrap().rate,
            coverage.rate
        );

        let shifted = run_pipeline(&cfg, 6).unwrap();
        assert_ne!(shifted.model, out.model);
    }

    #[test]
    fn offline_global_pipeline_smoke() {
        let mut cfg = tiny_config();
        cfg.conformal.mode = MODE_OFFLINE_GLOBAL.to_string();
        cfg.conformal.calibration_size = 8;
        cfg.evaluation = None;
        let out = run_pipeline(&cfg, 3).unwrap();
        assert_eq!(out.bounds.mode, MODE_OFFLINE_GLOBAL);
        assert!(out.report.coverage.is_none());
    }
}
