//! On-disk artifact formats.
//!
//! Every pipeline stage communicates through JSON files with explicit
//! schemas, plus CSV renditions of trajectories and tubes for spreadsheet
//! work. Matrices are stored row-major as nested arrays. Files that derive
//! from a model embed the model's content hash so stale artifacts are
//! detectable.
//!
//! JSON cannot represent infinities, so unbounded tube faces are clamped to
//! +-1e308 on write and the owning record is flagged (`unbounded` in tube
//! provenance, an absent `e_bar` in calibration files). Readers treat the
//! flag, not the sentinel value, as authoritative.

use crate::boundprop::{Provenance, ReachTube, TubeKind};
use crate::conformal::ConformalBounds;
use crate::controller::{GainSchedule, ReferencePlan};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::geom::IntervalBox;
use crate::koopman::{
    Activation, DenseLayer, KoopmanModel, MlpNetwork, Normalization, TrainingMeta,
};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Largest finite magnitude written to JSON; see the module docs.
const CLAMP: f64 = 1e308;

fn clamp_finite(v: f64) -> f64 {
    v.clamp(-CLAMP, CLAMP)
}

// ---------------------------------------------------------------------------
// generic JSON helpers

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

fn matrix_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    if rows.is_empty() {
        return Err(Error::invalid(format!("{what} has no rows")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid(format!("{what} has ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat)
        .map_err(|e| Error::invalid(format!("{what}: {e}")))
}

// ---------------------------------------------------------------------------
// trajectories

/// Serialized trajectory: states are `(horizon + 1) x n`, controls
/// `horizon x m`, with the system name and step size they were sampled from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub system: String,
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TrajectoryFile {
    pub fn from_trajectory(system: &str, dt: f64, traj: &Trajectory, seed: Option<u64>) -> Self {
        TrajectoryFile {
            system: system.to_string(),
            dt,
            states: traj.states.iter().map(|s| s.to_vec()).collect(),
            controls: traj.controls.iter().map(|u| u.to_vec()).collect(),
            seed,
        }
    }

    pub fn to_trajectory(&self) -> Result<Trajectory> {
        let traj = Trajectory {
            states: self.states.iter().map(|r| Array1::from_vec(r.clone())).collect(),
            controls: self
                .controls
                .iter()
                .map(|r| Array1::from_vec(r.clone()))
                .collect(),
        };
        traj.validate()?;
        Ok(traj)
    }
}

/// One row per time step: `t, x_0.., u_0..`; the final row leaves the
/// control columns empty.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let n = traj.state_dim();
    let m = traj.control_dim();
    let mut out = String::from("t");
    for j in 0..n {
        out.push_str(&format!(",x{j}"));
    }
    for j in 0..m {
        out.push_str(&format!(",u{j}"));
    }
    out.push('\n');
    for (t, s) in traj.states.iter().enumerate() {
        out.push_str(&t.to_string());
        for v in s.iter() {
            out.push_str(&format!(",{v}"));
        }
        if t < traj.controls.len() {
            for v in traj.controls[t].iter() {
                out.push_str(&format!(",{v}"));
            }
        } else {
            for _ in 0..m {
                out.push(',');
            }
        }
        out.push('\n');
    }
    out
}

/// Stable content hash of a trajectory (ignores seed metadata).
pub fn trajectory_content_hash(traj: &Trajectory) -> String {
    let mut hasher = Sha256::new();
    for s in &traj.states {
        for v in s.iter() {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hasher.update(b"|");
    for u in &traj.controls {
        for v in u.iter() {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(&hasher.finalize()[..12])
}

// ---------------------------------------------------------------------------
// models

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationFile {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetaFile {
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Serialized model: dimensions, activation, layer parameters row-major,
/// latent dynamics, standardization, and training provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub state_dim: usize,
    pub control_dim: usize,
    pub latent_dim: usize,
    pub activation: Activation,
    pub encoder: Vec<LayerFile>,
    pub decoder: Vec<LayerFile>,
    pub k_a: Vec<Vec<f64>>,
    pub k_b: Vec<Vec<f64>>,
    pub normalization: NormalizationFile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingMetaFile>,
}

fn layers_to_files(net: &MlpNetwork) -> Vec<LayerFile> {
    net.layers
        .iter()
        .map(|l| LayerFile {
            weight: matrix_to_rows(&l.weight),
            bias: l.bias.to_vec(),
        })
        .collect()
}

fn files_to_layers(files: &[LayerFile], activation: Activation, what: &str) -> Result<MlpNetwork> {
    let layers = files
        .iter()
        .map(|f| DenseLayer::new(rows_to_matrix(&f.weight, what)?, Array1::from_vec(f.bias.clone())))
        .collect::<Result<Vec<_>>>()?;
    MlpNetwork::new(layers, activation)
}

impl ModelFile {
    pub fn from_model(model: &KoopmanModel) -> Self {
        ModelFile {
            state_dim: model.state_dim(),
            control_dim: model.control_dim(),
            latent_dim: model.latent_dim(),
            activation: model.encoder.activation,
            encoder: layers_to_files(&model.encoder),
            decoder: layers_to_files(&model.decoder),
            k_a: matrix_to_rows(&model.k_a),
            k_b: matrix_to_rows(&model.k_b),
            normalization: NormalizationFile {
                mean: model.normalization.mean.to_vec(),
                std: model.normalization.std.to_vec(),
            },
            training: model.meta.as_ref().map(|m| TrainingMetaFile {
                seed: m.seed,
                epochs: m.epochs,
                final_loss: m.final_loss,
                epoch_losses: m.epoch_losses.clone(),
            }),
        }
    }

    pub fn to_model(&self) -> Result<KoopmanModel> {
        let encoder = files_to_layers(&self.encoder, self.activation, "encoder weight")?;
        let decoder = files_to_layers(&self.decoder, self.activation, "decoder weight")?;
        let mut model = KoopmanModel::new(
            encoder,
            decoder,
            rows_to_matrix(&self.k_a, "k_a")?,
            rows_to_matrix(&self.k_b, "k_b")?,
            Normalization {
                mean: Array1::from_vec(self.normalization.mean.clone()),
                std: Array1::from_vec(self.normalization.std.clone()),
            },
        )?;
        if model.state_dim() != self.state_dim
            || model.control_dim() != self.control_dim
            || model.latent_dim() != self.latent_dim
        {
            return Err(Error::invalid(
                "declared model dimensions disagree with the stored parameters".to_string(),
            ));
        }
        model.meta = self.training.as_ref().map(|t| TrainingMeta {
            seed: t.seed,
            epochs: t.epochs,
            final_loss: t.final_loss,
            epoch_losses: t.epoch_losses.clone(),
        });
        Ok(model)
    }
}

pub fn write_model(path: &Path, model: &KoopmanModel) -> Result<()> {
    write_json(path, &ModelFile::from_model(model))
}

pub fn read_model(path: &Path) -> Result<KoopmanModel> {
    read_json::<ModelFile>(path)?.to_model()
}

/// Stable content hash of a model's parameters (training metadata excluded,
/// so retraining to identical weights yields the same hash).
pub fn model_content_hash(model: &KoopmanModel) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model.encoder.activation.name().as_bytes());
    let mut eat_net = |net: &MlpNetwork| {
        for l in &net.layers {
            hasher.update(l.weight.nrows().to_le_bytes());
            hasher.update(l.weight.ncols().to_le_bytes());
            for v in l.weight.iter().chain(l.bias.iter()) {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
    };
    eat_net(&model.encoder);
    eat_net(&model.decoder);
    for v in model
        .k_a
        .iter()
        .chain(model.k_b.iter())
        .chain(model.normalization.mean.iter())
        .chain(model.normalization.std.iter())
    {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hex::encode(&hasher.finalize()[..12])
}

// ---------------------------------------------------------------------------
// plans and gain schedules

/// Serialized encoded reference with its feedforward controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub model_hash: String,
    pub z_ref: Vec<Vec<f64>>,
    pub u_ref: Vec<Vec<f64>>,
    pub x_ref: TrajectoryFile,
}

impl PlanFile {
    pub fn from_plan(plan: &ReferencePlan, model_hash: &str, system: &str, dt: f64) -> Self {
        PlanFile {
            model_hash: model_hash.to_string(),
            z_ref: plan.z_ref.iter().map(|z| z.to_vec()).collect(),
            u_ref: plan.u_ref.iter().map(|u| u.to_vec()).collect(),
            x_ref: TrajectoryFile::from_trajectory(system, dt, &plan.x_ref, None),
        }
    }

    pub fn to_plan(&self) -> Result<ReferencePlan> {
        let plan = ReferencePlan {
            z_ref: self.z_ref.iter().map(|r| Array1::from_vec(r.clone())).collect(),
            u_ref: self.u_ref.iter().map(|r| Array1::from_vec(r.clone())).collect(),
            x_ref: self.x_ref.to_trajectory()?,
        };
        if plan.z_ref.len() != plan.u_ref.len() + 1 {
            return Err(Error::invalid(
                "plan needs one more latent waypoint than controls".to_string(),
            ));
        }
        Ok(plan)
    }
}

/// Serialized time-varying feedback gains.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsFile {
    pub model_hash: String,
    pub gains: Vec<Vec<Vec<f64>>>,
}

impl GainsFile {
    pub fn from_gains(gains: &GainSchedule, model_hash: &str) -> Self {
        GainsFile {
            model_hash: model_hash.to_string(),
            gains: gains.gains.iter().map(matrix_to_rows).collect(),
        }
    }

    pub fn to_gains(&self) -> Result<GainSchedule> {
        Ok(GainSchedule {
            gains: self
                .gains
                .iter()
                .map(|g| rows_to_matrix(g, "gain matrix"))
                .collect::<Result<Vec<_>>>()?,
        })
    }
}

// ---------------------------------------------------------------------------
// reach tubes

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxFile {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvenanceFile {
    pub reference_id: String,
    pub model_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub unbounded: bool,
}

/// Serialized reach tube: one box per time step, `horizon + 1` in total.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeFile {
    pub kind: String,
    pub horizon: usize,
    pub state_dim: usize,
    pub boxes: Vec<BoxFile>,
    pub provenance: ProvenanceFile,
}

impl TubeFile {
    pub fn from_tube(tube: &ReachTube) -> Self {
        TubeFile {
            kind: match tube.kind {
                TubeKind::Krs => "KRS".to_string(),
                TubeKind::Ckrs => "CKRS".to_string(),
            },
            horizon: tube.boxes.len().saturating_sub(1),
            state_dim: tube.state_dim(),
            boxes: tube
                .boxes
                .iter()
                .map(|b| BoxFile {
                    lower: b.lower().iter().map(|&v| clamp_finite(v)).collect(),
                    upper: b.upper().iter().map(|&v| clamp_finite(v)).collect(),
                })
                .collect(),
            provenance: ProvenanceFile {
                reference_id: tube.provenance.reference_id.clone(),
                model_hash: tube.provenance.model_hash.clone(),
                delta: tube.provenance.delta,
                unbounded: tube.provenance.unbounded,
            },
        }
    }

    pub fn to_tube(&self) -> Result<ReachTube> {
        let kind = match self.kind.as_str() {
            "KRS" => TubeKind::Krs,
            "CKRS" => TubeKind::Ckrs,
            other => {
                return Err(Error::invalid(format!(
                    "unknown tube kind '{other}' (expected KRS or CKRS)"
                )))
            }
        };
        let boxes = self
            .boxes
            .iter()
            .map(|b| {
                IntervalBox::new(
                    Array1::from_vec(b.lower.clone()),
                    Array1::from_vec(b.upper.clone()),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let tube = ReachTube {
            kind,
            boxes,
            provenance: Provenance {
                reference_id: self.provenance.reference_id.clone(),
                model_hash: self.provenance.model_hash.clone(),
                delta: self.provenance.delta,
                unbounded: self.provenance.unbounded,
            },
        };
        tube.validate()?;
        if tube.boxes.len() != self.horizon + 1 || tube.state_dim() != self.state_dim {
            return Err(Error::invalid(
                "tube dimensions disagree with the declared header".to_string(),
            ));
        }
        Ok(tube)
    }
}

/// One row per time step: `t, lower_0, upper_0, lower_1, upper_1, ..`.
pub fn tube_to_csv(tube: &ReachTube) -> String {
    let n = tube.state_dim();
    let mut out = String::from("t");
    for j in 0..n {
        out.push_str(&format!(",lower{j},upper{j}"));
    }
    out.push('\n');
    for (t, b) in tube.boxes.iter().enumerate() {
        out.push_str(&t.to_string());
        for j in 0..n {
            out.push_str(&format!(",{},{}", b.lower()[j], b.upper()[j]));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// calibration results

/// Serialized calibration outcome. `c` is the conformal quantile; when it is
/// infinite (too few calibration samples for the requested confidence) the
/// file records `c_unbounded: true`, omits `e_bar`, and clamps nothing else.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConformalFile {
    pub delta: f64,
    pub sigma: f64,
    pub calibration_size: usize,
    pub weight_sample_size: usize,
    pub mode: String,
    pub config_hash: String,
    pub c: f64,
    pub c_unbounded: bool,
    /// `(horizon + 1) x n` normalization weights.
    pub lambda: Vec<Vec<f64>>,
    /// `(horizon + 1) x n` per-step error bounds; absent when `c` is
    /// unbounded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_bar: Option<Vec<Vec<f64>>>,
}

impl ConformalFile {
    pub fn from_bounds(bounds: &ConformalBounds, config_hash: &str) -> Self {
        ConformalFile {
            delta: bounds.delta,
            sigma: bounds.sigma,
            calibration_size: bounds.calibration_size,
            weight_sample_size: bounds.weight_sample_size,
            mode: bounds.mode.clone(),
            config_hash: config_hash.to_string(),
            c: clamp_finite(bounds.c),
            c_unbounded: bounds.c.is_infinite(),
            lambda: matrix_to_rows(&bounds.lambda),
            e_bar: if bounds.c.is_finite() {
                Some(matrix_to_rows(&bounds.e_bar))
            } else {
                None
            },
        }
    }

    pub fn to_bounds(&self) -> Result<ConformalBounds> {
        let lambda = rows_to_matrix(&self.lambda, "lambda")?;
        let c = if self.c_unbounded { f64::INFINITY } else { self.c };
        let e_bar = match (&self.e_bar, self.c_unbounded) {
            (Some(rows), false) => rows_to_matrix(rows, "e_bar")?,
            (None, true) => Array2::from_elem(lambda.raw_dim(), f64::INFINITY),
            _ => {
                return Err(Error::invalid(
                    "e_bar must be present exactly when c is finite".to_string(),
                ))
            }
        };
        Ok(ConformalBounds {
            delta: self.delta,
            sigma: self.sigma,
            calibration_size: self.calibration_size,
            weight_sample_size: self.weight_sample_size,
            mode: self.mode.clone(),
            c,
            lambda,
            e_bar,
        })
    }
}
