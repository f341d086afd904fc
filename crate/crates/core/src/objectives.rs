//! Training objectives: the cosine (angle-only) loss, its convex combination
//! with the hyperbolic distance, the curriculum coefficient α(e), and an
//! InfoNCE loss over a FIFO queue of negatives for the contrastive ablation.

use crate::error::{Error, Result};
use crate::geometry::{self, dot, norm, PoincarePoint};
use std::collections::VecDeque;

/// Linear ramp of the hyperbolic weight: 0 up to `e1`, 1 from `e2` on.
#[derive(Debug, Clone, Copy)]
pub struct CurriculumSchedule {
    pub e1: usize,
    pub e2: usize,
}

impl CurriculumSchedule {
    pub fn new(e1: usize, e2: usize) -> Result<Self> {
        if e1 >= e2 {
            return Err(Error::InvalidInput(format!("curriculum requires e1 < e2, got ({e1}, {e2})")));
        }
        Ok(CurriculumSchedule { e1, e2 })
    }
}

pub fn alpha_schedule(epoch: usize, s: CurriculumSchedule) -> f64 {
    if epoch <= s.e1 {
        0.0
    } else if epoch >= s.e2 {
        1.0
    } else {
        (epoch - s.e1) as f64 / (s.e2 - s.e1) as f64
    }
}

/// Softmax temperature; must be positive.
#[derive(Debug, Clone, Copy)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidInput(format!("temperature must be positive, got {tau}")));
        }
        Ok(Temperature(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// 1 − cos(h, ĥ). The similarity alone would be maximized, not minimized;
/// the distance form keeps the minimized quantity nonnegative.
pub fn cosine_loss(h: &[f64], h_hat: &[f64]) -> Result<f64> {
    if h.len() != h_hat.len() {
        return Err(Error::InvalidInput(format!("dimension mismatch: {} vs {}", h.len(), h_hat.len())));
    }
    let (nh, nt) = (norm(h), norm(h_hat));
    if nh <= 1e-12 || nt <= 1e-12 {
        return Err(Error::InvalidInput("cosine_loss requires nonzero vectors".into()));
    }
    Ok(1.0 - dot(h, h_hat) / (nh * nt))
}

/// α·poincare_loss + (1−α)·cosine_loss on the same point pair.
pub fn hysp_loss(h: &PoincarePoint, h_hat: &PoincarePoint, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha must be in [0,1], got {alpha}")));
    }
    let poin = geometry::poincare_loss(h, h_hat)?;
    let cos = cosine_loss(h.coords(), h_hat.coords())?;
    Ok(alpha * poin + (1.0 - alpha) * cos)
}

/// Fixed-capacity FIFO of unit-norm negative embeddings.
#[derive(Debug, Clone)]
pub struct NegativeQueue {
    entries: VecDeque<Vec<f64>>,
    capacity: usize,
}

impl NegativeQueue {
    pub fn new(capacity: usize) -> Self {
        NegativeQueue { entries: VecDeque::with_capacity(capacity), capacity }
    }

    /// Normalizes and appends; the oldest entry is evicted at capacity.
    pub fn push(&mut self, v: &[f64]) -> Result<()> {
        let n = norm(v);
        if n <= 1e-12 || !n.is_finite() {
            return Err(Error::InvalidInput("queue entries must be nonzero finite vectors".into()));
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(v.iter().map(|x| x / n).collect());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.entries.iter()
    }
}

/// −log( exp(z·ẑ/τ) / (exp(z·ẑ/τ) + Σᵢ exp(z·mᵢ/τ)) ) with z, ẑ unit-normalized
/// first and the log-sum-exp stabilized by max subtraction.
pub fn infonce_loss(z: &[f64], z_hat: &[f64], queue: &NegativeQueue, tau: Temperature) -> Result<f64> {
    if z.is_empty() || z_hat.is_empty() || z.len() != z_hat.len() {
        return Err(Error::InvalidInput(format!(
            "infonce requires matching nonempty vectors, got lengths {} and {}",
            z.len(),
            z_hat.len()
        )));
    }
    let (nz, nt) = (norm(z), norm(z_hat));
    if nz <= 1e-12 || nt <= 1e-12 {
        return Err(Error::InvalidInput("infonce requires nonzero vectors".into()));
    }
    let zn: Vec<f64> = z.iter().map(|x| x / nz).collect();
    let tn: Vec<f64> = z_hat.iter().map(|x| x / nt).collect();
    let t = tau.get();
    let mut logits = Vec::with_capacity(queue.len() + 1);
    logits.push(dot(&zn, &tn) / t);
    for m in queue.iter() {
        logits.push(dot(&zn, m) / t);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[0])
}
