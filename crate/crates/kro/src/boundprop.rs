//! Sound affine relaxation bounds for ReLU networks, and reachable tubes for
//! the closed loop they sit inside.
//!
//! The workhorse is a pair of affine functions of the network input that
//! bracket the network output over a given input box. Bounds are derived by
//! backward substitution: starting from a layer's weights, each earlier ReLU
//! layer is replaced by per-neuron linear envelopes chosen by coefficient
//! sign, until the bound is expressed over the input. Each neuron's envelope
//! needs that neuron's pre-activation interval, which is obtained by
//! concretizing the same kind of bound computed up to that layer, so layers
//! are processed front to back while each bound is substituted back to front.
//!
//! Reachable tubes chain these network bounds with the exact affine
//! closed-loop latent dynamics: the encoder is bounded once over the initial
//! box, the latent recursion is composed step by step, and the decoder is
//! freshly relaxed each step over the concretized latent box (a documented
//! approximation: the decoder envelope is only as tight as that box).

use crate::controller::{GainSchedule, ReferencePlan};
use crate::error::{Error, Result};
use crate::geom::IntervalBox;
use crate::io;
use crate::koopman::mlp::{Activation, DenseLayer, MlpNetwork};
use crate::koopman::KoopmanModel;
use ndarray::{Array1, Array2};

/// Linear envelope of one ReLU neuron over a pre-activation interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReluRelaxation {
    pub lower_slope: f64,
    pub lower_intercept: f64,
    pub upper_slope: f64,
    pub upper_intercept: f64,
}

/// Envelope of `relu` over `[lower, upper]`.
///
/// Inactive neurons get the zero function on both sides, active neurons the
/// identity. A crossing interval gets the chord as upper envelope and, for
/// the lower envelope, whichever of identity and zero has the smaller area
/// gap (identity when `upper >= |lower|`).
pub fn relu_relax(lower: f64, upper: f64) -> Result<ReluRelaxation> {
    if lower.is_nan() || upper.is_nan() || lower > upper {
        return Err(Error::invalid(format!(
            "need an interval with lower <= upper, got [{lower}, {upper}]"
        )));
    }
    if !(lower.is_finite() && upper.is_finite()) {
        return Err(Error::invalid(
            "relu envelopes need a finite interval".to_string(),
        ));
    }
    if upper <= 0.0 {
        return Ok(ReluRelaxation {
            lower_slope: 0.0,
            lower_intercept: 0.0,
            upper_slope: 0.0,
            upper_intercept: 0.0,
        });
    }
    if lower >= 0.0 {
        return Ok(ReluRelaxation {
            lower_slope: 1.0,
            lower_intercept: 0.0,
            upper_slope: 1.0,
            upper_intercept: 0.0,
        });
    }
    let upper_slope = upper / (upper - lower);
    Ok(ReluRelaxation {
        lower_slope: if upper >= -lower { 1.0 } else { 0.0 },
        lower_intercept: 0.0,
        upper_slope,
        upper_intercept: -lower * upper_slope,
    })
}

/// Per-neuron envelopes of one hidden layer, struct-of-arrays for the
/// backward pass.
#[derive(Debug, Clone)]
struct LayerRelaxation {
    low_slope: Array1<f64>,
    low_icept: Array1<f64>,
    up_slope: Array1<f64>,
    up_icept: Array1<f64>,
}

impl LayerRelaxation {
    fn from_box(pre: &IntervalBox) -> Result<Self> {
        let d = pre.dim();
        let mut r = LayerRelaxation {
            low_slope: Array1::zeros(d),
            low_icept: Array1::zeros(d),
            up_slope: Array1::zeros(d),
            up_icept: Array1::zeros(d),
        };
        for i in 0..d {
            let relax = relu_relax(pre.lower()[i], pre.upper()[i])?;
            r.low_slope[i] = relax.lower_slope;
            r.low_icept[i] = relax.lower_intercept;
            r.up_slope[i] = relax.upper_slope;
            r.up_icept[i] = relax.upper_intercept;
        }
        Ok(r)
    }
}

/// Affine functions of the input that bracket some vector quantity:
/// `lower_coef x + lower_const <= y(x) <= upper_coef x + upper_const` for
/// every `x` in the input box the pair was derived over.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBoundPair {
    pub lower_coef: Array2<f64>,
    pub lower_const: Array1<f64>,
    pub upper_coef: Array2<f64>,
    pub upper_const: Array1<f64>,
}

impl AffineBoundPair {
    /// The exact pair for `y = x`.
    pub fn identity(dim: usize) -> Self {
        AffineBoundPair {
            lower_coef: Array2::eye(dim),
            lower_const: Array1::zeros(dim),
            upper_coef: Array2::eye(dim),
            upper_const: Array1::zeros(dim),
        }
    }

    /// The exact pair for `y = m x + c`.
    pub fn exact_affine(m: Array2<f64>, c: Array1<f64>) -> Result<Self> {
        if m.nrows() != c.len() {
            return Err(Error::dimension(format!(
                "affine map has {} rows but offset has {} entries",
                m.nrows(),
                c.len()
            )));
        }
        Ok(AffineBoundPair {
            lower_coef: m.clone(),
            lower_const: c.clone(),
            upper_coef: m,
            upper_const: c,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.lower_coef.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.lower_coef.nrows()
    }

    /// Lower bound evaluated at a concrete input.
    pub fn lower_at(&self, x: &Array1<f64>) -> Array1<f64> {
        self.lower_coef.dot(x) + &self.lower_const
    }

    /// Upper bound evaluated at a concrete input.
    pub fn upper_at(&self, x: &Array1<f64>) -> Array1<f64> {
        self.upper_coef.dot(x) + &self.upper_const
    }

    fn check_consistent(&self) -> Result<()> {
        if self.upper_coef.raw_dim() != self.lower_coef.raw_dim()
            || self.lower_const.len() != self.output_dim()
            || self.upper_const.len() != self.output_dim()
        {
            return Err(Error::dimension(
                "bound pair halves disagree on their shape".to_string(),
            ));
        }
        Ok(())
    }
}

fn split_signs(m: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    (m.mapv(|v| v.max(0.0)), m.mapv(|v| v.min(0.0)))
}

/// Tightest box implied by a bound pair over an input box: minimize the
/// lower affine function and maximize the upper one, coordinate-wise, by
/// picking the matching box corner for each coefficient sign.
pub fn concretize(pair: &AffineBoundPair, input: &IntervalBox) -> Result<IntervalBox> {
    pair.check_consistent()?;
    if input.dim() != pair.input_dim() {
        return Err(Error::dimension(format!(
            "bound pair reads {} inputs, box has {}",
            pair.input_dim(),
            input.dim()
        )));
    }
    if !input.is_finite() {
        return Err(Error::invalid(
            "cannot concretize over an unbounded box".to_string(),
        ));
    }
    let (lp, ln) = split_signs(&pair.lower_coef);
    let (up, un) = split_signs(&pair.upper_coef);
    let lower = &pair.lower_const + &lp.dot(input.lower()) + &ln.dot(input.upper());
    let upper = &pair.upper_const + &up.dot(input.upper()) + &un.dot(input.lower());
    IntervalBox::new(lower, upper)
}

/// Bounds for `m y + c` given bounds for `y`, with the sign split applied
/// row-wise to `m`.
pub fn compose_linear(
    pair: &AffineBoundPair,
    m: &Array2<f64>,
    c: &Array1<f64>,
) -> Result<AffineBoundPair> {
    compose_pair(&AffineBoundPair::exact_affine(m.clone(), c.clone())?, pair)
}

/// Bounds for `g(f(x))` given bounds for `g` (as a function of its own
/// input) and bounds for `f` (as a function of `x`).
///
/// Soundness precondition: the outer pair must be valid on a region that
/// contains the inner pair's concretized range; the caller owns that
/// containment.
pub fn compose_pair(outer: &AffineBoundPair, inner: &AffineBoundPair) -> Result<AffineBoundPair> {
    outer.check_consistent()?;
    inner.check_consistent()?;
    if outer.input_dim() != inner.output_dim() {
        return Err(Error::dimension(format!(
            "outer pair reads {} inputs, inner pair produces {}",
            outer.input_dim(),
            inner.output_dim()
        )));
    }
    let (olp, oln) = split_signs(&outer.lower_coef);
    let (oup, oun) = split_signs(&outer.upper_coef);
    Ok(AffineBoundPair {
        lower_coef: olp.dot(&inner.lower_coef) + oln.dot(&inner.upper_coef),
        lower_const: &outer.lower_const
            + &olp.dot(&inner.lower_const)
            + &oln.dot(&inner.upper_const),
        upper_coef: oup.dot(&inner.upper_coef) + oun.dot(&inner.lower_coef),
        upper_const: &outer.upper_const
            + &oup.dot(&inner.upper_const)
            + &oun.dot(&inner.lower_const),
    })
}

/// Affine input bounds on the pre-activations of layer `j`, by substituting
/// backward through the envelopes of all earlier layers.
fn backsubstitute(
    layers: &[DenseLayer],
    relaxations: &[LayerRelaxation],
    j: usize,
) -> AffineBoundPair {
    let mut pair = AffineBoundPair {
        lower_coef: layers[j].weight.clone(),
        lower_const: layers[j].bias.clone(),
        upper_coef: layers[j].weight.clone(),
        upper_const: layers[j].bias.clone(),
    };
    for k in (0..j).rev() {
        pass_envelope(&mut pair, &relaxations[k]);
        // Substitute the affine layer h_k = W_k a + b_k.
        pair.lower_const = &pair.lower_const + &pair.lower_coef.dot(&layers[k].bias);
        pair.lower_coef = pair.lower_coef.dot(&layers[k].weight);
        pair.upper_const = &pair.upper_const + &pair.upper_coef.dot(&layers[k].bias);
        pair.upper_coef = pair.upper_coef.dot(&layers[k].weight);
    }
    pair
}

/// Rewrites a pair in terms of post-activations into one in terms of
/// pre-activations: positive coefficients keep the envelope side they are
/// bounding, negative ones take the opposite side.
fn pass_envelope(pair: &mut AffineBoundPair, relax: &LayerRelaxation) {
    for r in 0..pair.output_dim() {
        for i in 0..pair.input_dim() {
            let c = pair.lower_coef[[r, i]];
            if c >= 0.0 {
                pair.lower_coef[[r, i]] = c * relax.low_slope[i];
                pair.lower_const[r] += c * relax.low_icept[i];
            } else {
                pair.lower_coef[[r, i]] = c * relax.up_slope[i];
                pair.lower_const[r] += c * relax.up_icept[i];
            }
            let c = pair.upper_coef[[r, i]];
            if c >= 0.0 {
                pair.upper_coef[[r, i]] = c * relax.up_slope[i];
                pair.upper_const[r] += c * relax.up_icept[i];
            } else {
                pair.upper_coef[[r, i]] = c * relax.low_slope[i];
                pair.upper_const[r] += c * relax.low_icept[i];
            }
        }
    }
}

/// Sound affine bounds on a ReLU network over a finite input box.
pub fn bound_network(net: &MlpNetwork, input: &IntervalBox) -> Result<AffineBoundPair> {
    if net.layers.len() > 1 && net.activation != Activation::Relu {
        return Err(Error::invalid(format!(
            "bound propagation supports relu networks, not {}",
            net.activation.name()
        )));
    }
    if input.dim() != net.input_dim() {
        return Err(Error::dimension(format!(
            "network reads {} inputs, box has {}",
            net.input_dim(),
            input.dim()
        )));
    }
    if !input.is_finite() {
        return Err(Error::invalid(
            "bound propagation needs a bounded input box".to_string(),
        ));
    }
    let mut relaxations: Vec<LayerRelaxation> = Vec::with_capacity(net.layers.len() - 1);
    for j in 0..net.layers.len() {
        let pair = backsubstitute(&net.layers, &relaxations, j);
        if j == net.layers.len() - 1 {
            return Ok(pair);
        }
        let pre = concretize(&pair, input)?;
        relaxations.push(LayerRelaxation::from_box(&pre)?);
    }
    unreachable!("loop returns on the last layer")
}

/// Which guarantee a tube carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TubeKind {
    /// Sound for the model's decoded closed-loop rollouts.
    Krs,
    /// The above, inflated by a conformal margin for the true system.
    Ckrs,
}

/// What a tube was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    /// Content hash of the reference trajectory.
    pub reference_id: String,
    /// Content hash of the model parameters.
    pub model_hash: String,
    /// Miscoverage level of the inflation; `None` for plain reach tubes.
    pub delta: Option<f64>,
    /// True when an unbounded conformal margin made some face infinite.
    pub unbounded: bool,
}

/// A box per time step, `boxes[0]` being the initial set itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachTube {
    pub kind: TubeKind,
    pub boxes: Vec<IntervalBox>,
    pub provenance: Provenance,
}

impl ReachTube {
    pub fn horizon(&self) -> usize {
        self.boxes.len().saturating_sub(1)
    }

    pub fn state_dim(&self) -> usize {
        self.boxes.first().map_or(0, IntervalBox::dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(Error::invalid("tube has no boxes".to_string()));
        }
        let n = self.state_dim();
        if self.boxes.iter().any(|b| b.dim() != n) {
            return Err(Error::dimension("tube boxes have mixed dimensions".to_string()));
        }
        Ok(())
    }

    /// Whether a trajectory's states lie inside the tube at every step.
    pub fn contains_states(&self, states: &[Array1<f64>], tol: f64) -> bool {
        states.len() == self.boxes.len()
            && states
                .iter()
                .zip(self.boxes.iter())
                .all(|(x, b)| b.contains(x, tol))
    }
}

fn check_krs_inputs(
    model: &KoopmanModel,
    plan: &ReferencePlan,
    gains: &GainSchedule,
    x0: &IntervalBox,
) -> Result<()> {
    let t = plan.horizon();
    if t == 0 {
        return Err(Error::invalid("plan has no control steps".to_string()));
    }
    if plan.z_ref.len() != t + 1 {
        return Err(Error::dimension(
            "plan needs one more latent waypoint than control steps".to_string(),
        ));
    }
    if gains.horizon() != t {
        return Err(Error::dimension(format!(
            "gain schedule covers {} steps, plan covers {t}",
            gains.horizon()
        )));
    }
    let (l, m) = (model.latent_dim(), model.control_dim());
    if gains.gains.iter().any(|g| g.nrows() != m || g.ncols() != l) {
        return Err(Error::dimension(format!(
            "gains must be {m}x{l} for this model"
        )));
    }
    if plan.z_ref.iter().any(|z| z.len() != l) || plan.u_ref.iter().any(|u| u.len() != m) {
        return Err(Error::dimension(
            "plan dimensions disagree with the model".to_string(),
        ));
    }
    if x0.dim() != model.state_dim() {
        return Err(Error::dimension(format!(
            "initial box is {}-dimensional, model expects {}",
            x0.dim(),
            model.state_dim()
        )));
    }
    Ok(())
}

/// Affine bounds (in terms of the initial state) on the closed-loop latent
/// state at every step: index `t` bounds `z_t`, index 0 the encoding itself.
pub fn closed_loop_latent_bounds(
    model: &KoopmanModel,
    plan: &ReferencePlan,
    gains: &GainSchedule,
    x0: &IntervalBox,
) -> Result<Vec<AffineBoundPair>> {
    check_krs_inputs(model, plan, gains, x0)?;
    let mut pairs = Vec::with_capacity(plan.horizon() + 1);
    pairs.push(bound_network(&model.encoder_network(), x0)?);
    for t in 0..plan.horizon() {
        let g = &gains.gains[t];
        // u = u_ref - G (z - z_ref), so z' = (A - B G) z + B (u_ref + G z_ref).
        let a_cl = &model.k_a - &model.k_b.dot(g);
        let offset = model.k_b.dot(&(&plan.u_ref[t] + &g.dot(&plan.z_ref[t])));
        pairs.push(compose_linear(&pairs[t], &a_cl, &offset)?);
    }
    Ok(pairs)
}

/// Reachable tube of the decoded closed-loop model over an initial box.
///
/// Sound for [`crate::controller::rollout_latent_decoded`]: every decoded
/// rollout started inside `x0` stays inside the tube (up to floating-point
/// roundoff, which is not directed here).
pub fn compute_krs(
    model: &KoopmanModel,
    plan: &ReferencePlan,
    gains: &GainSchedule,
    x0: &IntervalBox,
) -> Result<ReachTube> {
    let latent = closed_loop_latent_bounds(model, plan, gains, x0)?;
    let decoder_net = model.decoder_network();
    let mut boxes = Vec::with_capacity(plan.horizon() + 1);
    boxes.push(x0.clone());
    for pair in latent.iter().skip(1) {
        let z_box = concretize(pair, x0)?;
        let dec_pair = bound_network(&decoder_net, &z_box)?;
        let x_pair = compose_pair(&dec_pair, pair)?;
        boxes.push(concretize(&x_pair, x0)?);
    }
    Ok(ReachTube {
        kind: TubeKind::Krs,
        boxes,
        provenance: Provenance {
            reference_id: io::trajectory_content_hash(&plan.x_ref),
            model_hash: io::model_content_hash(model),
            delta: None,
            unbounded: false,
        },
    })
}
