//! Poincaré-ball primitives.
//!
//! Points live in the open ball of radius 1/√c. Everything here is computed
//! in f64; all functions are pure. The ball-membership invariant is enforced
//! by construction: the only ways to obtain a [`PoincarePoint`] clamp the
//! norm below the boundary, where the distance and its gradient blow up.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Max-norm clamp: points are kept at Euclidean norm ≤ (1 − EPS_BALL)/√c.
pub const EPS_BALL: f64 = 1e-5;
/// Below this separation the distance gradient's unit vector is undefined.
pub const EPS_COINCIDE: f64 = 1e-12;

/// Ball curvature parameter; the ball radius is 1/√c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidInput(format!("curvature must be finite and positive, got {c}")));
        }
        Ok(Curvature(c))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// 1/√c, the Euclidean radius of the ball.
    pub fn ball_radius(self) -> f64 {
        1.0 / self.0.sqrt()
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Curvature(1.0)
    }
}

/// A point strictly inside the ball of curvature `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincarePoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl PoincarePoint {
    /// Validating constructor; rejects points on or outside the clamped ball.
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        ensure_finite(&coords)?;
        let max = (1.0 - EPS_BALL) * curvature.ball_radius();
        // Tiny slack so values that round-trip through the clamp re-validate.
        if norm(&coords) > max * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "point norm {} exceeds ball clamp {}",
                norm(&coords),
                max
            )));
        }
        Ok(PoincarePoint { coords, curvature })
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        PoincarePoint { coords: vec![0.0; dim], curvature }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Euclidean norm of the coordinates — the embedding's radius.
    pub fn radius(&self) -> f64 {
        norm(&self.coords)
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ensure_finite(v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite coordinate".into()));
    }
    Ok(())
}

fn same_space(h: &PoincarePoint, h_hat: &PoincarePoint) -> Result<()> {
    if h.curvature != h_hat.curvature {
        return Err(Error::InvalidInput(format!(
            "curvature mismatch: {} vs {}",
            h.curvature.get(),
            h_hat.curvature.get()
        )));
    }
    if h.dim() != h_hat.dim() {
        return Err(Error::InvalidInput(format!("dimension mismatch: {} vs {}", h.dim(), h_hat.dim())));
    }
    Ok(())
}

/// Clamp a vector into the ball: unchanged if already inside the max-norm
/// shell, otherwise rescaled to norm (1 − EPS_BALL)/√c with direction kept.
pub fn project_to_ball(v: &[f64], c: Curvature) -> Result<PoincarePoint> {
    ensure_finite(v)?;
    let max = (1.0 - EPS_BALL) * c.ball_radius();
    let n = norm(v);
    let coords = if n > max {
        let s = max / n;
        v.iter().map(|x| x * s).collect()
    } else {
        v.to_vec()
    };
    Ok(PoincarePoint { coords, curvature: c })
}

/// Exponential map at the origin: z ↦ tanh(√c‖z‖)·z/(√c‖z‖), extended by
/// continuity at z = 0, then clamped into the ball.
pub fn exp_map0(z: &[f64], c: Curvature) -> Result<PoincarePoint> {
    ensure_finite(z)?;
    let sc = c.get().sqrt();
    let n = norm(z);
    if n == 0.0 {
        return Ok(PoincarePoint::origin(z.len(), c));
    }
    let scale = (sc * n).tanh() / (sc * n);
    let mapped: Vec<f64> = z.iter().map(|x| x * scale).collect();
    project_to_ball(&mapped, c)
}

/// Hyperbolic distance between two points of the unit-curvature ball:
/// acosh(1 + 2‖h−ĥ‖² / ((1−‖h‖²)(1−‖ĥ‖²))).
/// The acosh argument is clamped to ≥ 1 against cancellation for
/// near-identical points, so coincident inputs return exactly 0.
pub fn poincare_loss(h: &PoincarePoint, h_hat: &PoincarePoint) -> Result<f64> {
    same_space(h, h_hat)?;
    let q: f64 = h.coords.iter().zip(&h_hat.coords).map(|(a, b)| (a - b) * (a - b)).sum();
    let a = 1.0 - dot(&h.coords, &h.coords);
    let b = 1.0 - dot(&h_hat.coords, &h_hat.coords);
    // The formula is specific to the unit ball. Curvature < 1 admits points
    // with Euclidean norm ≥ 1, where 1−‖·‖² flips sign and the expression
    // turns meaningless; better to refuse than to return garbage.
    if a <= 0.0 || b <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "loss needs norms < 1, got {} and {}",
            h.radius(),
            h_hat.radius()
        )));
    }
    let arg = (1.0 + 2.0 * q / (a * b)).max(1.0);
    Ok(arg.acosh())
}

/// Certainty complement of an embedding: 1 − ‖ĥ‖. Radius near the boundary
/// means a confident embedding, radius near 0 an uncertain one.
pub fn uncertainty(h_hat: &PoincarePoint) -> f64 {
    1.0 - h_hat.radius()
}

/// Closed-form Riemannian gradient of `poincare_loss` in its first argument.
#[derive(Debug, Clone)]
pub struct PoincareGrad {
    pub grad: Vec<f64>,
    /// Set when the points coincide: the loss is at its minimum and the
    /// gradient direction is undefined, so `grad` is the zero vector.
    pub at_minimum: bool,
}

/// ((1−‖h‖²)² / (2√((1−‖h‖²)(1−‖ĥ‖²) + ‖h−ĥ‖²))) · ((h−ĥ)/‖h−ĥ‖ + h‖h−ĥ‖/(1−‖h‖²))
///
/// Equals the metric-rescaled Euclidean gradient: (1−‖h‖²)²/4 times the
/// Euclidean gradient of `poincare_loss` in h.
pub fn riemannian_grad_poincare(h: &PoincarePoint, h_hat: &PoincarePoint) -> Result<PoincareGrad> {
    same_space(h, h_hat)?;
    let diff: Vec<f64> = h.coords.iter().zip(&h_hat.coords).map(|(a, b)| a - b).collect();
    let qn = norm(&diff);
    if qn <= EPS_COINCIDE {
        return Ok(PoincareGrad { grad: vec![0.0; h.dim()], at_minimum: true });
    }
    let a = 1.0 - dot(&h.coords, &h.coords);
    let b = 1.0 - dot(&h_hat.coords, &h_hat.coords);
    if a <= 0.0 || b <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "gradient needs norms < 1, got {} and {}",
            h.radius(),
            h_hat.radius()
        )));
    }
    let pref = a * a / (2.0 * (a * b + qn * qn).sqrt());
    let grad = diff
        .iter()
        .zip(&h.coords)
        .map(|(d, hi)| pref * (d / qn + hi * qn / a))
        .collect();
    Ok(PoincareGrad { grad, at_minimum: false })
}

/// One Riemannian SGD step with projection retraction:
/// x′ = clamp(x − lr·((1−c‖x‖²)²/4)·g). The scale factor is the inverse of
/// the squared conformal factor, i.e. the Euclidean-to-Riemannian gradient
/// conversion; the retraction is a plain Euclidean step plus re-projection.
pub fn rsgd_step(x: &PoincarePoint, euclid_grad: &[f64], lr: f64) -> Result<PoincarePoint> {
    ensure_finite(euclid_grad)?;
    if !lr.is_finite() || lr <= 0.0 {
        return Err(Error::InvalidInput(format!("learning rate must be positive, got {lr}")));
    }
    if euclid_grad.len() != x.dim() {
        return Err(Error::InvalidInput(format!(
            "gradient dimension {} does not match point dimension {}",
            euclid_grad.len(),
            x.dim()
        )));
    }
    let c = x.curvature.get();
    let nsq = dot(&x.coords, &x.coords);
    let scale = lr * (1.0 - c * nsq).powi(2) / 4.0;
    let stepped: Vec<f64> = x.coords.iter().zip(euclid_grad).map(|(xi, gi)| xi - scale * gi).collect();
    project_to_ball(&stepped, x.curvature)
}
