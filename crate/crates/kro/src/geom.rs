//! Axis-aligned boxes, the only set representation used by the reachability
//! layers.

use crate::error::{Error, Result};
use ndarray::Array1;
use rand::Rng;

/// A product of closed intervals `[lower_j, upper_j]`.
///
/// Invariants, enforced at construction: `lower.len() == upper.len()`,
/// `lower_j <= upper_j` for every `j`, and no entry is NaN. Infinite bounds
/// are legal; they arise when a conformal margin is unbounded and are carried
/// through rather than rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBox {
    lower: Array1<f64>,
    upper: Array1<f64>,
}

impl IntervalBox {
    pub fn new(lower: Array1<f64>, upper: Array1<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dimension(format!(
                "box bounds disagree: lower has {} entries, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (j, (&lo, &hi)) in lower.iter().zip(upper.iter()).enumerate() {
            if lo.is_nan() || hi.is_nan() {
                return Err(Error::invalid(format!("box bound {j} is NaN")));
            }
            if lo > hi {
                return Err(Error::invalid(format!(
                    "box bound {j} inverted: lower {lo} > upper {hi}"
                )));
            }
        }
        Ok(IntervalBox { lower, upper })
    }

    /// The infinity-norm ball of radius `radius` around `center`.
    pub fn ball(center: &Array1<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::invalid(format!(
                "ball radius must be non-negative, got {radius}"
            )));
        }
        IntervalBox::new(center - radius, center + radius)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &Array1<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &Array1<f64> {
        &self.upper
    }

    pub fn center(&self) -> Array1<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn width(&self) -> Array1<f64> {
        &self.upper - &self.lower
    }

    pub fn is_finite(&self) -> bool {
        self.lower.iter().all(|v| v.is_finite()) && self.upper.iter().all(|v| v.is_finite())
    }

    /// Whether `x` lies inside, with `tol >= 0` of slack on each face.
    pub fn contains(&self, x: &Array1<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter())
                .zip(self.upper.iter())
                .all(|((&v, &lo), &hi)| v >= lo - tol && v <= hi + tol)
    }

    /// Grows each face outward by the per-dimension margin. Margins must be
    /// non-negative; infinite margins yield infinite bounds.
    pub fn inflate(&self, margins: &Array1<f64>) -> Result<Self> {
        if margins.len() != self.dim() {
            return Err(Error::dimension(format!(
                "margin vector has {} entries for a {}-dimensional box",
                margins.len(),
                self.dim()
            )));
        }
        if margins.iter().any(|m| m.is_nan() || *m < 0.0) {
            return Err(Error::invalid("inflation margins must be >= 0".to_string()));
        }
        IntervalBox::new(&self.lower - margins, &self.upper + margins)
    }

    /// Uniform sample from a finite box. Degenerate intervals return their
    /// single point.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R) -> Result<Array1<f64>> {
        if !self.is_finite() {
            return Err(Error::invalid(
                "cannot sample uniformly from an unbounded box".to_string(),
            ));
        }
        let mut x = Array1::zeros(self.dim());
        for j in 0..self.dim() {
            let r: f64 = rng.random();
            x[j] = self.lower[j] + r * (self.upper[j] - self.lower[j]);
        }
        Ok(x)
    }
}
