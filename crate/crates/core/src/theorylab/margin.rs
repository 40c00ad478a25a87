//! Score margins, the softmax lower bound, and the additive margin breakdown.

use serde::{Deserialize, Serialize};

use super::world::{SyntheticView, SyntheticWorld};
use crate::error::{FclError, Result};
use crate::numerics::{dot, norm};

/// `s_i - max_{j != i} s_j`.
pub fn margin(scores: &[f64], class: usize) -> Result<f64> {
    if scores.len() < 2 {
        return Err(FclError::Degenerate("margin needs at least two classes".into()));
    }
    let own = *scores.get(class).ok_or(FclError::UnknownClass(class))?;
    let best_other = scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != class)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(own - best_other)
}

/// `1 / (1 + (C - 1) e^{-m})`, a lower bound on the softmax probability of a
/// class whose margin is `m`.
pub fn softmax_lower_bound(m: f64, n_classes: usize) -> f64 {
    1.0 / (1.0 + (n_classes.saturating_sub(1)) as f64 * (-m).exp())
}

/// Score-gap terms against one competitor `j`, in cosine units (multiply by
/// `beta` for logits). `gap = unique - (common_bias + competitor_unique +
/// residual + noise)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompetitorTerms {
    pub class: usize,
    /// `a_com <z_com, tau_j - tau_y>`.
    pub common_bias: f64,
    /// `a_j <z_uniq_j, tau_j>`.
    pub competitor_unique: f64,
    /// Cross-unique alignments: `sum_{i != j} a_i <z_uniq_i, tau_j> - sum_{i != y} a_i <z_uniq_i, tau_y>`.
    pub residual: f64,
    /// `<eps, tau_j - tau_y>`.
    pub noise: f64,
    /// `<raw, tau_y - tau_j>`, computed directly.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginBreakdown {
    pub class: usize,
    /// `a_y <z_uniq_y, tau_y>`.
    pub unique: f64,
    pub competitors: Vec<CompetitorTerms>,
    /// Competitor attaining the smallest gap.
    pub nearest: usize,
    /// `beta (unique - max_j (...))` recombined from the named terms,
    /// before normalization.
    pub recombined_margin: f64,
    /// Margin of the raw (un-normalized) scores.
    pub raw_margin: f64,
    /// Margin of the realized unit-norm view; equals `raw_margin / ||raw||`.
    pub margin: f64,
    pub reconstruction_error: f64,
}

/// Decomposes the margin of `class` on `view` against every competitor.
pub fn margin_breakdown(
    world: &SyntheticWorld,
    text: &[Vec<f64>],
    view: &SyntheticView,
    class: usize,
    beta: f64,
) -> Result<MarginBreakdown> {
    let c = world.n_classes();
    if class >= c {
        return Err(FclError::UnknownClass(class));
    }
    if text.len() != c {
        return Err(FclError::shape("text embeddings", c, text.len()));
    }
    let align = |component: &[f64], k: usize| dot(component, &text[k]);
    let cross = |k: usize| -> f64 {
        (0..c)
            .filter(|&i| i != k)
            .map(|i| view.a_unique[i] * align(&world.unique[i], k))
            .sum()
    };
    let unique = view.a_unique[class] * align(&world.unique[class], class);
    let own_cross = cross(class);
    let mut competitors = Vec::with_capacity(c - 1);
    for j in (0..c).filter(|&j| j != class) {
        let diff: Vec<f64> = text[j].iter().zip(&text[class]).map(|(a, b)| a - b).collect();
        competitors.push(CompetitorTerms {
            class: j,
            common_bias: view.a_common * dot(&world.common, &diff),
            competitor_unique: view.a_unique[j] * align(&world.unique[j], j),
            residual: cross(j) - own_cross,
            noise: dot(&view.noise, &diff),
            gap: -dot(&view.raw, &diff),
        });
    }
    let (nearest_pos, worst) = competitors
        .iter()
        .map(|t| t.common_bias + t.competitor_unique + t.residual + t.noise)
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
        );
    let recombined_margin = beta * (unique - worst);
    let raw_scores: Vec<f64> = text.iter().map(|t| beta * dot(&view.raw, t)).collect();
    let raw_margin = margin(&raw_scores, class)?;
    let scores: Vec<f64> = text.iter().map(|t| beta * dot(&view.embedding, t)).collect();
    Ok(MarginBreakdown {
        class,
        unique,
        nearest: competitors[nearest_pos].class,
        competitors,
        recombined_margin,
        raw_margin,
        margin: margin(&scores, class)?,
        reconstruction_error: (recombined_margin - raw_margin).abs(),
    })
}

/// Normalization shrinks every score gap by the same factor `||raw||`.
pub fn normalization_factor(view: &SyntheticView) -> f64 {
    norm(&view.raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{softmax, RngStream};
    use crate::theorylab::world::WorldSpec;

    #[test]
    fn margin_examples() {
        assert_eq!(margin(&[2.0, 1.0, 0.0], 0).unwrap(), 1.0);
        assert_eq!(margin(&[3.0, 3.0, 0.0], 1).unwrap(), 0.0);
        assert_eq!(margin(&[2.0, 1.0, 0.0], 2).unwrap(), -2.0);
        assert!(margin(&[1.0], 0).is_err());
        assert!(margin(&[1.0, 2.0], 5).is_err());
    }

    #[test]
    fn margin_matches_sort_oracle() {
        let mut rng = RngStream::new(2, 0);
        for _ in 0..500 {
            let n = 2 + (rng.uniform() * 20.0) as usize;
            let s: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
            let i = (rng.uniform() * n as f64) as usize % n;
            let mut others: Vec<f64> = s.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
            others.sort_by(|a, b| b.total_cmp(a));
            assert_eq!(margin(&s, i).unwrap(), s[i] - others[0]);
        }
    }

    #[test]
    fn bound_examples() {
        assert_eq!(softmax_lower_bound(0.0, 2), 0.5);
        assert!((softmax_lower_bound(50.0, 10) - 1.0).abs() < 1e-15);
        let b = softmax_lower_bound(1.0, 3);
        assert!((b - 0.57611688476582911).abs() < 1e-15);
        let p = softmax(&[2.0, 1.0, 0.0]).unwrap();
        assert!(b <= p.probs()[0]);
        // Two classes: the bound is the sigmoid and therefore exact.
        let p2 = softmax(&[0.7, -0.4]).unwrap();
        assert!((softmax_lower_bound(1.1, 2) - p2.probs()[0]).abs() < 1e-15);
    }

    fn world(noise: f64, common: Vec<f64>, cross: f64) -> SyntheticWorld {
        SyntheticWorld::new(WorldSpec {
            n_classes: 5,
            d: 32,
            common_alignment: common,
            cross_unique_alignment: cross,
            noise,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_noise_reconstruction_is_exact() {
        let w = world(0.0, vec![0.5, 0.6, 0.4, 0.45, 0.5], 0.1);
        let mut rng = RngStream::new(8, 0);
        for _ in 0..50 {
            let a: Vec<f64> = (0..5).map(|_| rng.uniform()).collect();
            let v = w.view(rng.uniform() * 2.0, &a, &mut rng).unwrap();
            let y = (rng.uniform() * 5.0) as usize % 5;
            let b = margin_breakdown(&w, &w.text, &v, y, 20.0).unwrap();
            assert!(b.reconstruction_error < 1e-9, "{}", b.reconstruction_error);
            assert!((b.margin - b.raw_margin / normalization_factor(&v)).abs() < 1e-9);
            for t in &b.competitors {
                assert_eq!(t.noise, 0.0);
                let named = b.unique - (t.common_bias + t.competitor_unique + t.residual);
                assert!((named - t.gap).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noisy_recombination_still_exact_with_noise_term() {
        let w = world(0.3, vec![0.5], 0.05);
        let mut rng = RngStream::new(9, 0);
        let v = w.view(1.0, &[0.4, 0.1, 0.0, 0.2, 0.3], &mut rng).unwrap();
        let b = margin_breakdown(&w, &w.text, &v, 0, 20.0).unwrap();
        assert!(b.reconstruction_error < 1e-9);
        assert!(b.competitors.iter().any(|t| t.noise != 0.0));
    }

    #[test]
    fn common_bias_flips_the_margin() {
        // Class 1 is more aligned with the shared component than class 0.
        let w = world(0.0, vec![0.3, 0.7, 0.3, 0.3, 0.3], 0.0);
        let mut rng = RngStream::new(1, 0);
        let v = w.view(1.0, &[0.2, 0.0, 0.0, 0.0, 0.0], &mut rng).unwrap();
        let b = margin_breakdown(&w, &w.text, &v, 0, 20.0).unwrap();
        // Unique term 0.2 * 0.6 = 0.12 < bias 0.4.
        assert!(b.margin < 0.0);
        assert_eq!(b.nearest, 1);
        let bias = b.competitors.iter().find(|t| t.class == 1).unwrap().common_bias;
        assert!((bias - 0.4).abs() < 1e-12);
    }

    #[test]
    fn equal_common_alignment_has_no_bias() {
        let w = world(0.0, vec![0.5], 0.0);
        let mut rng = RngStream::new(2, 0);
        let v = w.view(1.3, &[0.3, 0.2, 0.1, 0.0, 0.5], &mut rng).unwrap();
        let b = margin_breakdown(&w, &w.text, &v, 2, 20.0).unwrap();
        assert!(b.competitors.iter().all(|t| t.common_bias.abs() < 1e-12));
    }
}
