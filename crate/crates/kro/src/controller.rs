//! Reference tracking in the lifted space.
//!
//! Given a model and a reference trajectory, the plan is: encode the
//! reference, invert the latent dynamics through a pseudo-inverse for the
//! feedforward controls, and run a finite-horizon Riccati recursion for the
//! time-varying feedback gains. The combined law is
//! `u_t = u_ref_t - G_t (z - z_ref_t)`, applied either to an exact latent
//! state or to the encoding of a measured state.

use crate::dynamics::{rollout, System, Trajectory};
use crate::error::{Error, Result};
use crate::koopman::KoopmanModel;
use nalgebra::{Cholesky, DMatrix};
use ndarray::{Array1, Array2};

/// Relative singular-value cutoff for the feedforward pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Quadratic tracking costs. All three matrices must be symmetric positive
/// definite; this is checked once at construction so the Riccati recursion
/// can assume it.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrWeights {
    pub q: Array2<f64>,
    pub r: Array2<f64>,
    pub q_terminal: Array2<f64>,
}

impl LqrWeights {
    pub fn new(q: Array2<f64>, r: Array2<f64>, q_terminal: Array2<f64>) -> Result<Self> {
        check_spd(&q, "q")?;
        check_spd(&r, "r")?;
        check_spd(&q_terminal, "q_terminal")?;
        Ok(LqrWeights { q, r, q_terminal })
    }

    /// The default costs: identity on the latent error, `0.1 I` on controls,
    /// terminal weight equal to the running weight.
    pub fn default_for_dims(latent_dim: usize, control_dim: usize) -> Self {
        let q = Array2::eye(latent_dim);
        LqrWeights {
            q: q.clone(),
            r: Array2::eye(control_dim) * 0.1,
            q_terminal: q,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.r.nrows()
    }
}

fn check_spd(m: &Array2<f64>, name: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dimension(format!(
            "{name} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for r in 0..m.nrows() {
        for c in 0..r {
            if (m[[r, c]] - m[[c, r]]).abs() > 1e-10 * scale {
                return Err(Error::invalid(format!("{name} is not symmetric")));
            }
        }
    }
    Cholesky::new(to_dmatrix(m))
        .map(|_| ())
        .ok_or_else(|| Error::numerical(format!("{name} is not positive definite")))
}

/// An encoded reference: latent waypoints, feedforward controls, and the raw
/// trajectory they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePlan {
    pub z_ref: Vec<Array1<f64>>,
    pub u_ref: Vec<Array1<f64>>,
    pub x_ref: Trajectory,
}

impl ReferencePlan {
    /// Encodes a reference trajectory and computes its feedforward controls.
    pub fn new(model: &KoopmanModel, x_ref: Trajectory) -> Result<Self> {
        x_ref.validate()?;
        if x_ref.state_dim() != model.state_dim() {
            return Err(Error::dimension(format!(
                "reference has {}-dimensional states, model expects {}",
                x_ref.state_dim(),
                model.state_dim()
            )));
        }
        let encoded = model.encode_batch(&x_ref.state_matrix())?;
        let z_ref: Vec<Array1<f64>> = encoded.rows().into_iter().map(|r| r.to_owned()).collect();
        let u_ref = feedforward(&model.k_a, &model.k_b, &z_ref)?;
        Ok(ReferencePlan {
            z_ref,
            u_ref,
            x_ref,
        })
    }

    /// Number of control steps.
    pub fn horizon(&self) -> usize {
        self.u_ref.len()
    }
}

/// Moore-Penrose pseudo-inverse via SVD, zeroing singular values below
/// `rel_cutoff` times the largest one.
pub fn pseudo_inverse(m: &Array2<f64>, rel_cutoff: f64) -> Result<Array2<f64>> {
    let svd = to_dmatrix(m).svd(true, true);
    let s_max = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    let pinv = svd
        .pseudo_inverse(rel_cutoff * s_max)
        .map_err(Error::numerical)?;
    Ok(to_array2(&pinv))
}

/// Feedforward controls that best reproduce consecutive latent waypoints:
/// `u_t = pinv(k_b) (z_{t+1} - k_a z_t)`.
pub fn feedforward(
    k_a: &Array2<f64>,
    k_b: &Array2<f64>,
    z_ref: &[Array1<f64>],
) -> Result<Vec<Array1<f64>>> {
    let l = k_a.nrows();
    if k_a.ncols() != l || k_b.nrows() != l {
        return Err(Error::dimension(
            "latent dynamics matrices disagree on the latent dimension".to_string(),
        ));
    }
    if z_ref.len() < 2 {
        return Err(Error::invalid(
            "need at least two latent waypoints".to_string(),
        ));
    }
    if z_ref.iter().any(|z| z.len() != l) {
        return Err(Error::dimension(
            "latent waypoint with the wrong dimension".to_string(),
        ));
    }
    let pinv = pseudo_inverse(k_b, PINV_CUTOFF)?;
    Ok(z_ref
        .windows(2)
        .map(|w| pinv.dot(&(&w[1] - &k_a.dot(&w[0]))))
        .collect())
}

/// Time-varying feedback gains, `gains[t]` applied at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub gains: Vec<Array2<f64>>,
}

impl GainSchedule {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }
}

/// Finite-horizon discrete Riccati recursion.
///
/// Backward from `P_T = Q_T`:
/// `G_t = (R + B' P_{t+1} B)^-1 B' P_{t+1} A` and
/// `P_t = Q + A' P_{t+1} (A - B G_t)`, with `P` re-symmetrized every step so
/// roundoff cannot accumulate into an asymmetric cost-to-go.
pub fn riccati_gains(
    k_a: &Array2<f64>,
    k_b: &Array2<f64>,
    weights: &LqrWeights,
    horizon: usize,
) -> Result<GainSchedule> {
    let l = k_a.nrows();
    let m = k_b.ncols();
    if k_a.ncols() != l || k_b.nrows() != l {
        return Err(Error::dimension(
            "latent dynamics matrices disagree on the latent dimension".to_string(),
        ));
    }
    if weights.latent_dim() != l || weights.control_dim() != m {
        return Err(Error::dimension(format!(
            "weights sized for ({}, {}), dynamics are ({l}, {m})",
            weights.latent_dim(),
            weights.control_dim()
        )));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be >= 1".to_string()));
    }

    let a = to_dmatrix(k_a);
    let b = to_dmatrix(k_b);
    let q = to_dmatrix(&weights.q);
    let r = to_dmatrix(&weights.r);
    let mut p = to_dmatrix(&weights.q_terminal);

    let mut gains_rev = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let btp = b.transpose() * &p;
        let mut s = &r + &btp * &b;
        symmetrize(&mut s);
        let chol = Cholesky::new(s).ok_or_else(|| {
            Error::numerical("control cost matrix lost positive definiteness".to_string())
        })?;
        let g = chol.solve(&(&btp * &a));
        p = &q + a.transpose() * &p * (&a - &b * &g);
        symmetrize(&mut p);
        if Cholesky::new(p.clone()).is_none() {
            return Err(Error::numerical(
                "cost-to-go lost positive definiteness".to_string(),
            ));
        }
        gains_rev.push(to_array2(&g));
    }
    gains_rev.reverse();
    Ok(GainSchedule { gains: gains_rev })
}

/// Feedback law on an exact latent state.
pub fn lifted_control(
    u_ref: &Array1<f64>,
    gain: &Array2<f64>,
    z: &Array1<f64>,
    z_ref: &Array1<f64>,
) -> Result<Array1<f64>> {
    if z.len() != z_ref.len() || gain.ncols() != z.len() || gain.nrows() != u_ref.len() {
        return Err(Error::dimension(format!(
            "gain is {}x{}, latent state has {} entries, feedforward has {}",
            gain.nrows(),
            gain.ncols(),
            z.len(),
            u_ref.len()
        )));
    }
    Ok(u_ref - &gain.dot(&(z - z_ref)))
}

/// Feedback law on a measured state, which is encoded first.
pub fn state_control(
    model: &KoopmanModel,
    u_ref: &Array1<f64>,
    gain: &Array2<f64>,
    x: &Array1<f64>,
    z_ref: &Array1<f64>,
) -> Result<Array1<f64>> {
    let z = model.encode(x)?;
    lifted_control(u_ref, gain, &z, z_ref)
}

fn check_plan_gains(
    model: &KoopmanModel,
    plan: &ReferencePlan,
    gains: &GainSchedule,
    x0: &Array1<f64>,
) -> Result<()> {
    if plan.horizon() == 0 {
        return Err(Error::invalid("plan has no control steps".to_string()));
    }
    if plan.z_ref.len() != plan.horizon() + 1 {
        return Err(Error::dimension(
            "plan needs one more latent waypoint than control steps".to_string(),
        ));
    }
    if gains.horizon() != plan.horizon() {
        return Err(Error::dimension(format!(
            "gain schedule covers {} steps, plan covers {}",
            gains.horizon(),
            plan.horizon()
        )));
    }
    if x0.len() != model.state_dim() {
        return Err(Error::dimension(format!(
            "initial state has {} entries, model expects {}",
            x0.len(),
            model.state_dim()
        )));
    }
    Ok(())
}

/// Closed-loop rollout entirely inside the model: encode once, run the
/// latent recursion under the feedback law, decode every step. Entry `t` of
/// the result is the decoded state at time `t`; entry 0 is `x0` itself.
pub fn rollout_latent_decoded(
    model: &KoopmanModel,
    plan: &ReferencePlan,
    gains: &GainSchedule,
    x0: &Array1<f64>,
) -> Result<Vec<Array1<f64>>> {
    check_plan_gains(model, plan, gains, x0)?;
    let mut out = Vec::with_capacity(plan.horizon() + 1);
    out.push(x0.clone());
    let mut z = model.encode(x0)?;
    for t in 0..plan.horizon() {
        let u = lifted_control(&plan.u_ref[t], &gains.gains[t], &z, &plan.z_ref[t])?;
        z = model.latent_step(&z, &u)?;
        out.push(model.decode(&z)?);
    }
    Ok(out)
}

/// Closed-loop rollout of the true system under the state-feedback law.
pub fn rollout_true_closed_loop(
    system: &System,
    model: &KoopmanModel,
    plan: &ReferencePlan,
    gains: &GainSchedule,
    x0: &Array1<f64>,
) -> Result<Trajectory> {
    check_plan_gains(model, plan, gains, x0)?;
    if system.state_dim() != model.state_dim() || system.control_dim() != model.control_dim() {
        return Err(Error::dimension(format!(
            "system is ({}, {}), model is ({}, {})",
            system.state_dim(),
            system.control_dim(),
            model.state_dim(),
            model.control_dim()
        )));
    }
    let mut x = x0.clone();
    let mut controls = Vec::with_capacity(plan.horizon());
    for t in 0..plan.horizon() {
        let u = state_control(model, &plan.u_ref[t], &gains.gains[t], &x, &plan.z_ref[t])?;
        x = system.step(&x, &u)?;
        controls.push(u);
    }
    rollout(system, x0, &controls)
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().copied())
}

fn to_array2(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(r, c)| m[(r, c)])
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_reference, ReferenceConfig};
    use crate::geom::IntervalBox;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pseudo_inverse_matches_hand_cases() {
        // Invertible: pinv = inverse.
        let m = array![[2.0, 0.0], [0.0, 4.0]];
        let pinv = pseudo_inverse(&m, PINV_CUTOFF).unwrap();
        assert_abs_diff_eq!(pinv[[0, 0]], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(pinv[[1, 1]], 0.25, epsilon = 1e-14);

        // Wide: least-norm solution splits evenly.
        let m = array![[1.0, 1.0]];
        let pinv = pseudo_inverse(&m, PINV_CUTOFF).unwrap();
        assert_abs_diff_eq!(pinv[[0, 0]], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(pinv[[1, 0]], 0.5, epsilon = 1e-14);

        // Zero: pinv is zero, no NaN.
        let m = Array2::zeros((2, 3));
        let pinv = pseudo_inverse(&m, PINV_CUTOFF).unwrap();
        assert!(pinv.iter().all(|&v| v == 0.0));
        assert_eq!(pinv.nrows(), 3);
    }

    #[test]
    fn pseudo_inverse_satisfies_penrose_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (r, c) = (1 + rng.random_range(0..4), 1 + rng.random_range(0..4));
            let m = Array2::from_shape_fn((r, c), |_| rng.random::<f64>() * 2.0 - 1.0);
            let p = pseudo_inverse(&m, PINV_CUTOFF).unwrap();
            let mpm = m.dot(&p).dot(&m);
            let pmp = p.dot(&m).dot(&p);
            for (a, b) in mpm.iter().zip(m.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
            for (a, b) in pmp.iter().zip(p.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn feedforward_inverts_scalar_dynamics_exactly() {
        let u = feedforward(
            &array![[2.0]],
            &array![[1.0]],
            &[array![1.0], array![3.0], array![7.0]],
        )
        .unwrap();
        assert_eq!(u, vec![array![1.0], array![1.0]]);
    }

    #[test]
    fn feedforward_requires_two_waypoints() {
        assert!(feedforward(&array![[1.0]], &array![[1.0]], &[array![0.0]]).is_err());
    }

    #[test]
    fn riccati_scalar_gains_match_hand_recursion() {
        let w = LqrWeights::new(array![[1.0]], array![[1.0]], array![[1.0]]).unwrap();
        let sched = riccati_gains(&array![[1.0]], &array![[1.0]], &w, 2).unwrap();
        assert_abs_diff_eq!(sched.gains[1][[0, 0]], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(sched.gains[0][[0, 0]], 0.6, epsilon = 1e-14);
    }

    /// Simulates the latent tracking cost for a gain schedule from a given
    /// initial error.
    fn tracking_cost(
        a: &Array2<f64>,
        b: &Array2<f64>,
        w: &LqrWeights,
        controls: &[Array1<f64>],
        dz0: &Array1<f64>,
    ) -> f64 {
        let mut z = dz0.clone();
        let mut cost = 0.0;
        for u in controls {
            cost += z.dot(&w.q.dot(&z)) + u.dot(&w.r.dot(u));
            z = a.dot(&z) + b.dot(u);
        }
        cost + z.dot(&w.q_terminal.dot(&z))
    }

    #[test]
    fn riccati_controls_are_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..10 {
            let l = 2 + trial % 3;
            let m = 1 + trial % 2;
            let a = Array2::from_shape_fn((l, l), |_| rng.random::<f64>() - 0.5);
            let b = Array2::from_shape_fn((l, m), |_| rng.random::<f64>() - 0.5);
            let w = LqrWeights::default_for_dims(l, m);
            let horizon = 6;
            let sched = riccati_gains(&a, &b, &w, horizon).unwrap();

            let dz0 = Array1::from_shape_fn(l, |_| rng.random::<f64>() - 0.5);
            let mut z = dz0.clone();
            let mut controls = Vec::new();
            for t in 0..horizon {
                let u = -sched.gains[t].dot(&z);
                z = a.dot(&z) + b.dot(&u);
                controls.push(u);
            }
            let optimal = tracking_cost(&a, &b, &w, &controls, &dz0);

            for _ in 0..5 {
                let mut perturbed = controls.clone();
                for u in &mut perturbed {
                    for v in u.iter_mut() {
                        *v += 1e-3 * (rng.random::<f64>() - 0.5);
                    }
                }
                let cost = tracking_cost(&a, &b, &w, &perturbed, &dz0);
                assert!(
                    cost >= optimal - 1e-9,
                    "perturbed cost {cost} beat the Riccati cost {optimal}"
                );
            }
        }
    }

    #[test]
    fn weights_validation_rejects_bad_matrices() {
        assert!(LqrWeights::new(array![[1.0, 0.2], [0.0, 1.0]], array![[1.0]], Array2::eye(2))
            .is_err());
        assert!(LqrWeights::new(array![[-1.0]], array![[1.0]], array![[1.0]]).is_err());
        assert!(LqrWeights::new(Array2::eye(2), array![[0.0]], Array2::eye(2)).is_err());
    }

    #[test]
    fn control_laws_apply_the_feedback_formula() {
        let u = lifted_control(
            &array![1.0],
            &array![[0.5, 0.0]],
            &array![2.0, 9.0],
            &array![1.0, 9.0],
        )
        .unwrap();
        assert_eq!(u, array![0.5]);
        assert!(lifted_control(&array![1.0], &array![[0.5]], &array![1.0, 2.0], &array![1.0]).is_err());
    }

    fn exact_setup() -> (System, KoopmanModel, ReferencePlan, GainSchedule) {
        let a = array![[0.95, 0.08], [-0.05, 0.9]];
        let b = array![[0.1, 0.0], [0.05, 0.2]];
        let system = System::linear(1.0, a.clone(), b.clone()).unwrap();
        let model = KoopmanModel::exact_linear(a, b).unwrap();
        let x_ref = generate_reference(
            &system,
            &ReferenceConfig {
                horizon: 20,
                smoothing_window: 3,
                control_bounds: vec![(-0.5, 0.5), (-0.5, 0.5)],
                init_box: IntervalBox::ball(&array![0.0, 0.0], 0.1).unwrap(),
                seed: 42,
            },
        )
        .unwrap();
        let plan = ReferencePlan::new(&model, x_ref).unwrap();
        let weights = LqrWeights::default_for_dims(2, 2);
        let gains = riccati_gains(&model.k_a, &model.k_b, &weights, plan.horizon()).unwrap();
        (system, model, plan, gains)
    }

    #[test]
    fn latent_and_true_rollouts_agree_bitwise_for_an_exact_model() {
        let (system, model, plan, gains) = exact_setup();
        let x0 = array![0.05, -0.03];
        let decoded = rollout_latent_decoded(&model, &plan, &gains, &x0).unwrap();
        let true_traj = rollout_true_closed_loop(&system, &model, &plan, &gains, &x0).unwrap();
        assert_eq!(decoded.len(), plan.horizon() + 1);
        for (d, s) in decoded.iter().zip(true_traj.states.iter()) {
            assert_eq!(d, s);
        }
    }

    #[test]
    fn feedforward_alone_reproduces_the_reference_from_its_start() {
        let (system, model, plan, gains) = exact_setup();
        // Starting exactly on the reference, feedback terms vanish and the
        // rollout retraces the reference states.
        let x0 = plan.x_ref.states[0].clone();
        let traj = rollout_true_closed_loop(&system, &model, &plan, &gains, &x0).unwrap();
        for (a, b) in traj.states.iter().zip(plan.x_ref.states.iter()) {
            for (ai, bi) in a.iter().zip(b.iter()) {
                assert_abs_diff_eq!(ai, bi, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn plan_and_gain_length_mismatches_are_rejected() {
        let (_, model, plan, gains) = exact_setup();
        let x0 = array![0.0, 0.0];
        let mut short = gains.clone();
        short.gains.pop();
        assert!(rollout_latent_decoded(&model, &plan, &short, &x0).is_err());
        assert!(rollout_latent_decoded(&model, &plan, &gains, &array![0.0]).is_err());
        let mut broken = plan.clone();
        broken.z_ref.pop();
        assert!(rollout_latent_decoded(&model, &broken, &gains, &x0).is_err());
    }
}
