//! Learned Koopman surrogates for nonlinear control, with guarantees bolted on.
//!
//! The pipeline: lift states through a trained encoder into a space where the
//! dynamics are (approximately) linear, track references there with
//! finite-horizon LQR, propagate sound interval bounds through the closed loop
//! to get a reachable tube, then widen the tube with a split-conformal margin
//! so it covers the true nonlinear system with a user-chosen probability.
//!
//! Modules mirror the pipeline stages:
//!
//! * [`dynamics`]: benchmark systems, forward-Euler rollouts, reference
//!   generation.
//! * [`koopman`]: encoder/decoder MLPs, lifted linear dynamics, training.
//! * [`controller`]: feedforward inversion and Riccati gain schedules.
//! * [`boundprop`]: linear relaxation bounds for ReLU networks and the
//!   closed-loop reachable-set recursion.
//! * [`conformal`]: calibration, nonconformity scores, tube inflation,
//!   coverage diagnostics.
//! * [`harness`]: experiment configs, the end-to-end pipeline, plots.
//! * [`io`]: JSON/CSV artifact formats shared by the CLI stages.

pub mod boundprop;
pub mod conformal;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod geom;
pub mod harness;
pub mod io;
pub mod koopman;
pub mod seed;

pub use error::{Error, Result};
