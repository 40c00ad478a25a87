//! Small-sample statistics for the metric-trend checks.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{FclError, Result};

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Pearson correlation; `None` when either side is constant or the lengths
/// differ or are below two.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(xs)?, mean(ys)?);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() {
        return None;
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// `U` for the first sample: pairs where it is larger (ties count half).
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for "the first sample tends to be larger".
    pub p_greater: f64,
    pub p_two_sided: f64,
}

/// Mann-Whitney U test with the tie-corrected normal approximation and the
/// one-sided continuity correction (`U - mu - 1/2`).
pub fn mann_whitney(xs: &[f64], ys: &[f64]) -> Result<MannWhitney> {
    if xs.is_empty() || ys.is_empty() {
        return Err(FclError::Degenerate("rank test needs two non-empty samples".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(FclError::NonFinite("rank test sample"));
    }
    let (n1, n2) = (xs.len() as f64, ys.len() as f64);
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let ranks = average_ranks(&pooled);
    let r1: f64 = ranks[..xs.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;

    let n = n1 + n2;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let variance = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let centered = u - n1 * n2 / 2.0;
    if !(variance > 0.0) {
        return Ok(MannWhitney {
            u,
            z: 0.0,
            p_greater: 0.5,
            p_two_sided: 1.0,
        });
    }
    let sd = variance.sqrt();
    let normal = Normal::standard();
    let z = (centered - 0.5) / sd;
    let z_abs = ((centered.abs() - 0.5) / sd).max(0.0);
    Ok(MannWhitney {
        u,
        z,
        p_greater: normal.sf(z),
        p_two_sided: (2.0 * normal.sf(z_abs)).min(1.0),
    })
}
