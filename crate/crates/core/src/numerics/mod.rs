//! Vector primitives, information-theoretic functions and the optimizer.
//!
//! Everything here works on `f64` slices. Probability vectors are wrapped in
//! [`ProbDist`], which validates on construction so downstream code can rely
//! on entries in `[0, 1]` summing to one.

mod adamw;
mod rng;
pub mod stats;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use rng::{stable_hash, RngStream};

use serde::{Deserialize, Serialize};

use crate::error::{FclError, Result};

/// Tolerance used when validating that a distribution sums to one.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// A discrete probability distribution over `n` outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Validates `probs` and wraps it.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(FclError::Degenerate("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(FclError::NonFinite("probability vector"));
        }
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(FclError::Degenerate("probability outside [0, 1]".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(FclError::Degenerate(format!("probabilities sum to {total}")));
        }
        Ok(ProbDist(probs))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over zero outcomes");
        ProbDist(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the most probable outcome; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(FclError::NonFinite("l2_normalize input"));
    }
    // Rescale first so huge or tiny inputs do not over/underflow the norm.
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return Err(FclError::Degenerate("zero-norm vector".into()));
    }
    let scaled: Vec<f64> = v.iter().map(|x| x / scale).collect();
    let n = norm(&scaled);
    Ok(scaled.into_iter().map(|x| x / n).collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Index of the largest entry; ties are broken toward the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Result<ProbDist> {
    if scores.is_empty() {
        return Err(FclError::Degenerate("softmax of empty vector".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(FclError::NonFinite("softmax scores"));
    }
    Ok(ProbDist(softmax_unchecked(scores)))
}

pub(crate) fn softmax_unchecked(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log softmax(scores)[index]`, computed without forming the probabilities.
pub fn log_softmax_at(scores: &[f64], index: usize) -> f64 {
    scores[index] - log_sum_exp(scores)
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &ProbDist) -> f64 {
    entropy_of(p.probs())
}

pub(crate) fn entropy_of(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    h.max(0.0)
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).ln())
        .sum()
}

/// Jensen-Shannon divergence in nats; bounded by `ln 2`.
pub fn js_divergence(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(FclError::shape("js_divergence", p.len(), q.len()));
    }
    Ok(js_of(p.probs(), q.probs()))
}

pub(crate) fn js_of(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let js = 0.5 * kl_to_mixture(p, &m) + 0.5 * kl_to_mixture(q, &m);
    js.clamp(0.0, std::f64::consts::LN_2)
}

/// Gradient of `JS(p || q)` with respect to `p` (with `q` held fixed).
///
/// The mixture terms cancel, leaving `0.5 ln(p_k / m_k)`. Entries with
/// `p_k = 0` get the one-sided limit clipped at `ln(1e-300)`.
pub(crate) fn js_grad_p(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter()
        .zip(q)
        .map(|(&pk, &qk)| {
            let m = 0.5 * (pk + qk);
            if m == 0.0 {
                0.0
            } else {
                0.5 * (pk.max(1e-300) / m).ln()
            }
        })
        .collect()
}
