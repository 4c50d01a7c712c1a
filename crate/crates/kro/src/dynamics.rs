//! Benchmark systems, forward-Euler integration, and reference generation.
//!
//! All continuous-time systems are discretized with a single explicit Euler
//! step per sample period; the step size is part of the system definition so
//! trajectories, models, and tubes always agree on the time base.

use crate::error::{Error, Result};
use crate::geom::IntervalBox;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pitch angles with |cos| below this make the attitude kinematics singular.
pub const GIMBAL_TOL: f64 = 1e-6;

/// A controlled discrete-time system `x_{t+1} = f(x_t, u_t)`.
///
/// The three robot benchmarks wrap continuous vector fields behind one Euler
/// step of length `dt`. `Linear` is a directly discrete map, used as a plant
/// whose lifted dynamics a linear-decoder model can represent exactly.
#[derive(Debug, Clone)]
pub enum System {
    /// Planar unicycle: position, heading; controls are forward speed and
    /// turn rate.
    Unicycle { dt: f64 },
    /// Planar quadrotor: horizontal/vertical position, pitch, and their
    /// rates; controls are total thrust and pitch torque.
    PlanarQuad {
        dt: f64,
        mass: f64,
        gravity: f64,
        inertia_y: f64,
    },
    /// Six-degree-of-freedom quadrotor with Euler-angle attitude
    /// (yaw, pitch, roll) and body rates; controls are thrust and three
    /// body torques.
    Quad3d {
        dt: f64,
        mass: f64,
        gravity: f64,
        inertia: [f64; 3],
    },
    /// `x_{t+1} = a x_t + b u_t`, already discrete.
    Linear {
        dt: f64,
        a: Array2<f64>,
        b: Array2<f64>,
    },
}

impl System {
    pub fn unicycle() -> Self {
        System::Unicycle { dt: 0.1 }
    }

    pub fn planar_quad() -> Self {
        System::PlanarQuad {
            dt: 0.05,
            mass: 0.5,
            gravity: -9.81,
            inertia_y: 0.01,
        }
    }

    pub fn quad3d() -> Self {
        System::Quad3d {
            dt: 0.025,
            mass: 1.0,
            gravity: -9.81,
            inertia: [0.5, 0.1, 0.3],
        }
    }

    pub fn linear(dt: f64, a: Array2<f64>, b: Array2<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::dimension(format!(
                "state matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::dimension(format!(
                "input matrix has {} rows for a {}-state system",
                b.nrows(),
                a.nrows()
            )));
        }
        Ok(System::Linear { dt, a, b })
    }

    /// Looks up a benchmark by its config name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "unicycle" => Ok(System::unicycle()),
            "planar_quad" => Ok(System::planar_quad()),
            "quad3d" => Ok(System::quad3d()),
            other => Err(Error::invalid(format!(
                "unknown system '{other}' (expected unicycle, planar_quad, or quad3d)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::Unicycle { .. } => "unicycle",
            System::PlanarQuad { .. } => "planar_quad",
            System::Quad3d { .. } => "quad3d",
            System::Linear { .. } => "linear",
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            System::Unicycle { dt }
            | System::PlanarQuad { dt, .. }
            | System::Quad3d { dt, .. }
            | System::Linear { dt, .. } => *dt,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            System::Unicycle { .. } => 3,
            System::PlanarQuad { .. } => 6,
            System::Quad3d { .. } => 12,
            System::Linear { a, .. } => a.nrows(),
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            System::Unicycle { .. } => 2,
            System::PlanarQuad { .. } => 2,
            System::Quad3d { .. } => 4,
            System::Linear { b, .. } => b.ncols(),
        }
    }

    /// One step of the discrete dynamics.
    pub fn step(&self, x: &Array1<f64>, u: &Array1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::dimension(format!(
                "{} expects {} states, got {}",
                self.name(),
                self.state_dim(),
                x.len()
            )));
        }
        if u.len() != self.control_dim() {
            return Err(Error::dimension(format!(
                "{} expects {} controls, got {}",
                self.name(),
                self.control_dim(),
                u.len()
            )));
        }
        match self {
            System::Unicycle { dt } => Ok(unicycle_step(x, u, *dt)),
            System::PlanarQuad {
                dt,
                mass,
                gravity,
                inertia_y,
            } => Ok(planar_quad_step(x, u, *dt, *mass, *gravity, *inertia_y)),
            System::Quad3d {
                dt,
                mass,
                gravity,
                inertia,
            } => quad3d_step(x, u, *dt, *mass, *gravity, inertia),
            System::Linear { a, b, .. } => Ok(a.dot(x) + b.dot(u)),
        }
    }
}

/// State (px, py, heading), controls (speed, turn rate).
fn unicycle_step(x: &Array1<f64>, u: &Array1<f64>, dt: f64) -> Array1<f64> {
    let theta = x[2];
    ndarray::array![
        x[0] + dt * u[0] * theta.cos(),
        x[1] + dt * u[0] * theta.sin(),
        x[2] + dt * u[1],
    ]
}

/// State (px, pz, pitch, vx, vz, pitch rate), controls (thrust, torque).
fn planar_quad_step(
    x: &Array1<f64>,
    u: &Array1<f64>,
    dt: f64,
    mass: f64,
    gravity: f64,
    inertia_y: f64,
) -> Array1<f64> {
    let theta = x[2];
    ndarray::array![
        x[0] + dt * x[3],
        x[1] + dt * x[4],
        x[2] + dt * x[5],
        x[3] + dt * (-u[0] / mass * theta.sin()),
        x[4] + dt * (gravity + u[0] / mass * theta.cos()),
        x[5] + dt * (u[1] / inertia_y),
    ]
}

/// State (px, py, pz, yaw, pitch, roll, vx, vy, vz, p, q, r), controls
/// (thrust, roll torque, pitch torque, yaw torque). Attitude kinematics use
/// the Euler-angle rate map, which is singular at pitch = +-pi/2.
fn quad3d_step(
    x: &Array1<f64>,
    u: &Array1<f64>,
    dt: f64,
    mass: f64,
    gravity: f64,
    inertia: &[f64; 3],
) -> Result<Array1<f64>> {
    let (psi, theta, phi) = (x[3], x[4], x[5]);
    let (p, q, r) = (x[9], x[10], x[11]);
    let (ix, iy, iz) = (inertia[0], inertia[1], inertia[2]);
    let cos_theta = theta.cos();
    if cos_theta.abs() < GIMBAL_TOL {
        return Err(Error::GimbalLock(cos_theta.abs()));
    }
    let tan_theta = theta.tan();
    let (sin_psi, cos_psi) = psi.sin_cos();
    let (sin_theta, _) = theta.sin_cos();
    let (sin_phi, cos_phi) = phi.sin_cos();
    let thrust = u[0] / mass;
    let d = ndarray::array![
        x[6],
        x[7],
        x[8],
        q * sin_phi / cos_theta + r * cos_phi / cos_theta,
        q * cos_phi - r * sin_phi,
        p + q * sin_phi * tan_theta + r * cos_phi * tan_theta,
        thrust * (sin_phi * sin_psi + cos_phi * cos_psi * sin_theta),
        thrust * (cos_phi * sin_phi - cos_phi * sin_psi * sin_theta),
        gravity + thrust * cos_phi * cos_theta,
        (iy - iz) / ix * q * r + u[1] / ix,
        (iz - ix) / iy * p * r + u[2] / iy,
        (ix - iy) / iz * p * q + u[3] / iz,
    ];
    Ok(x + &(d * dt))
}

/// A sampled state/control history: `states.len() == controls.len() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Array1<f64>>,
    pub controls: Vec<Array1<f64>>,
}

impl Trajectory {
    /// Number of transitions.
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn control_dim(&self) -> usize {
        self.controls.first().map_or(0, |u| u.len())
    }

    /// Checks the length and shape invariants that readers rely on.
    pub fn validate(&self) -> Result<()> {
        if self.controls.is_empty() {
            return Err(Error::invalid(
                "trajectory needs at least one transition".to_string(),
            ));
        }
        if self.states.len() != self.controls.len() + 1 {
            return Err(Error::dimension(format!(
                "{} states for {} controls; expected one more state than controls",
                self.states.len(),
                self.controls.len()
            )));
        }
        let n = self.state_dim();
        let m = self.control_dim();
        if self.states.iter().any(|s| s.len() != n) {
            return Err(Error::dimension("ragged state rows".to_string()));
        }
        if self.controls.iter().any(|u| u.len() != m) {
            return Err(Error::dimension("ragged control rows".to_string()));
        }
        if self
            .states
            .iter()
            .chain(self.controls.iter())
            .any(|row| row.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid("non-finite trajectory entry".to_string()));
        }
        Ok(())
    }

    /// States stacked row-wise into a `(horizon + 1, n)` matrix.
    pub fn state_matrix(&self) -> Array2<f64> {
        let n = self.state_dim();
        let mut m = Array2::zeros((self.states.len(), n));
        for (i, s) in self.states.iter().enumerate() {
            m.row_mut(i).assign(s);
        }
        m
    }

    /// Controls stacked row-wise into a `(horizon, m)` matrix.
    pub fn control_matrix(&self) -> Array2<f64> {
        let m = self.control_dim();
        let mut out = Array2::zeros((self.controls.len(), m));
        for (i, u) in self.controls.iter().enumerate() {
            out.row_mut(i).assign(u);
        }
        out
    }
}

/// Applies the control sequence open-loop from `x0`.
pub fn rollout(system: &System, x0: &Array1<f64>, controls: &[Array1<f64>]) -> Result<Trajectory> {
    if controls.is_empty() {
        return Err(Error::invalid(
            "rollout needs at least one control".to_string(),
        ));
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0.clone());
    for u in controls {
        let next = system.step(states.last().expect("states is non-empty"), u)?;
        states.push(next);
    }
    Ok(Trajectory {
        states,
        controls: controls.to_vec(),
    })
}

/// How reference trajectories are sampled.
///
/// Controls are drawn i.i.d. uniform per channel, passed through a trailing
/// moving average of `smoothing_window` samples, clamped back to the channel
/// bounds, and rolled out from a uniform sample of `init_box`.
#[derive(Debug, Clone)]
pub struct ReferenceConfig {
    pub horizon: usize,
    pub smoothing_window: usize,
    /// Per-channel closed intervals for the raw control draws.
    pub control_bounds: Vec<(f64, f64)>,
    pub init_box: IntervalBox,
    pub seed: u64,
}

/// Samples one smoothed-random-excitation reference trajectory.
pub fn generate_reference(system: &System, cfg: &ReferenceConfig) -> Result<Trajectory> {
    if cfg.horizon == 0 {
        return Err(Error::invalid("reference horizon must be >= 1".to_string()));
    }
    if cfg.smoothing_window == 0 {
        return Err(Error::invalid("smoothing window must be >= 1".to_string()));
    }
    if cfg.control_bounds.len() != system.control_dim() {
        return Err(Error::dimension(format!(
            "{} control bounds for a {}-input system",
            cfg.control_bounds.len(),
            system.control_dim()
        )));
    }
    for (j, &(lo, hi)) in cfg.control_bounds.iter().enumerate() {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::invalid(format!(
                "control bound {j} must be a finite interval, got [{lo}, {hi}]"
            )));
        }
    }
    if cfg.init_box.dim() != system.state_dim() {
        return Err(Error::dimension(format!(
            "initial box is {}-dimensional for a {}-state system",
            cfg.init_box.dim(),
            system.state_dim()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x0 = cfg.init_box.sample_uniform(&mut rng)?;

    let t = cfg.horizon;
    let m = system.control_dim();
    let mut raw = Array2::zeros((t, m));
    for i in 0..t {
        for j in 0..m {
            let (lo, hi) = cfg.control_bounds[j];
            let r: f64 = rng.random();
            raw[[i, j]] = lo + r * (hi - lo);
        }
    }

    let mut controls = Vec::with_capacity(t);
    for i in 0..t {
        let start = (i + 1).saturating_sub(cfg.smoothing_window);
        let count = (i - start + 1) as f64;
        let mut u = Array1::zeros(m);
        for j in 0..m {
            let mean = (start..=i).map(|k| raw[[k, j]]).sum::<f64>() / count;
            let (lo, hi) = cfg.control_bounds[j];
            u[j] = mean.clamp(lo, hi);
        }
        controls.push(u);
    }

    rollout(system, &x0, &controls)
}
