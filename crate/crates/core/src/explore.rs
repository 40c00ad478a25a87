//! Candidate exploration: score every view against a class subset, keep the
//! lowest-entropy fraction of views, and rank classes by their votes.
//!
//! All tie-breaks are deterministic: entropy ties go to the lower view index,
//! per-view argmax ties to the lower class position, and ranking ties to the
//! higher mean retained-view probability and then the lower class id.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{FclError, Result};
use crate::numerics::{argmax, dot, entropy_of, softmax, softmax_unchecked, ProbDist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// One vote per retained view for its most probable class.
    #[default]
    Voting,
    /// Average of the retained views' restricted posteriors.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreConfig {
    pub rho: f64,
    pub top_k: usize,
    pub aggregation: Aggregation,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            rho: 0.3,
            top_k: 10,
            aggregation: Aggregation::Voting,
        }
    }
}

impl ExploreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(FclError::invalid(
                "explore.rho",
                format!("must be in (0, 1], got {}", self.rho),
            ));
        }
        if self.top_k == 0 {
            return Err(FclError::invalid("explore.top_k", "must be >= 1"));
        }
        Ok(())
    }
}

/// Scores `beta <z_i, tau_c>` for `N` views against an ordered class subset.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    classes: Vec<usize>,
    n_views: usize,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn compute(
        view_embeddings: &[Vec<f64>],
        class_embeddings: &[Vec<f64>],
        classes: &[usize],
        beta: f64,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(FclError::EmptyCandidates);
        }
        if class_embeddings.len() != classes.len() {
            return Err(FclError::shape(
                "class embeddings",
                classes.len(),
                class_embeddings.len(),
            ));
        }
        let d = class_embeddings[0].len();
        let mut scores = Vec::with_capacity(view_embeddings.len() * classes.len());
        for z in view_embeddings {
            if z.len() != d {
                return Err(FclError::shape("view embedding", d, z.len()));
            }
            scores.extend(class_embeddings.iter().map(|t| beta * dot(z, t)));
        }
        Self::from_scores(classes.to_vec(), view_embeddings.len(), scores)
    }

    pub fn from_scores(classes: Vec<usize>, n_views: usize, scores: Vec<f64>) -> Result<Self> {
        if classes.is_empty() {
            return Err(FclError::EmptyCandidates);
        }
        if n_views == 0 {
            return Err(FclError::Degenerate("no views to score".into()));
        }
        if scores.len() != n_views * classes.len() {
            return Err(FclError::shape("score matrix", n_views * classes.len(), scores.len()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(FclError::NonFinite("score matrix"));
        }
        Ok(Self {
            classes,
            n_views,
            scores,
        })
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn row(&self, view: usize) -> &[f64] {
        let c = self.classes.len();
        &self.scores[view * c..(view + 1) * c]
    }

    pub fn posterior(&self, view: usize) -> ProbDist {
        restricted_posterior(self.row(view)).expect("rows are finite and non-empty")
    }

    /// Posterior entropy per view. Rows are sorted first, so views whose
    /// posteriors are permutations of each other tie exactly and fall back
    /// to the lower-index rule.
    pub fn entropies(&self) -> Vec<f64> {
        (0..self.n_views)
            .map(|i| {
                let mut row = self.row(i).to_vec();
                row.sort_by(|a, b| b.total_cmp(a));
                entropy_of(&softmax_unchecked(&row))
            })
            .collect()
    }
}

/// Softmax over the scores of a class subset.
pub fn restricted_posterior(scores: &[f64]) -> Result<ProbDist> {
    if scores.is_empty() {
        return Err(FclError::EmptyCandidates);
    }
    softmax(scores)
}

/// `max(1, floor(rho * n))`.
pub fn retained_count(n_views: usize, rho: f64) -> usize {
    // The small offset keeps e.g. 0.29 * 100 from flooring to 28.
    (((rho * n_views as f64) + 1e-9).floor() as usize).clamp(1, n_views.max(1))
}

/// Indices of the `max(1, floor(rho N))` lowest-entropy views, in ascending
/// entropy order.
pub fn filter_low_entropy(scores: &ScoreMatrix, rho: f64) -> Vec<usize> {
    select_lowest(&scores.entropies(), rho)
}

pub(crate) fn select_lowest(entropies: &[f64], rho: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..entropies.len()).collect();
    idx.sort_by(|&a, &b| entropies[a].total_cmp(&entropies[b]).then(a.cmp(&b)));
    idx.truncate(retained_count(entropies.len(), rho));
    idx
}

/// Per-class aggregate over the retained views, aligned with `scores.classes()`.
pub fn vote(scores: &ScoreMatrix, retained: &[usize], aggregation: Aggregation) -> Vec<f64> {
    let c = scores.classes().len();
    let mut out = vec![0.0; c];
    if retained.is_empty() {
        return out;
    }
    for &i in retained {
        match aggregation {
            Aggregation::Voting => out[argmax(scores.row(i))] += 1.0,
            Aggregation::Mean => {
                for (o, p) in out.iter_mut().zip(softmax_unchecked(scores.row(i))) {
                    *o += p;
                }
            }
        }
    }
    let n = retained.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Mean restricted posterior over the retained views.
pub fn mean_retained_probs(scores: &ScoreMatrix, retained: &[usize]) -> Vec<f64> {
    vote(scores, retained, Aggregation::Mean)
}

/// Ranked candidate classes with their aggregate scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub classes: Vec<usize>,
    /// Vote fractions (or mean probabilities in mean mode), non-increasing.
    pub vote_fractions: Vec<f64>,
    pub mean_probs: Vec<f64>,
    pub retained_views: Vec<usize>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// The top-ranked class.
    pub fn top(&self) -> usize {
        self.classes[0]
    }

    pub fn contains(&self, class: usize) -> bool {
        self.classes.contains(&class)
    }
}

/// Top-`min(K, |C|)` classes of a score matrix.
pub fn explore_topk(scores: &ScoreMatrix, cfg: &ExploreConfig) -> Result<CandidateSet> {
    cfg.validate()?;
    let retained = filter_low_entropy(scores, cfg.rho);
    let agg = vote(scores, &retained, cfg.aggregation);
    let means = mean_retained_probs(scores, &retained);
    let classes = scores.classes();
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&a, &b| {
        agg[b]
            .partial_cmp(&agg[a])
            .unwrap_or(Ordering::Equal)
            .then(means[b].partial_cmp(&means[a]).unwrap_or(Ordering::Equal))
            .then(classes[a].cmp(&classes[b]))
    });
    order.truncate(cfg.top_k.min(classes.len()));
    Ok(CandidateSet {
        classes: order.iter().map(|&p| classes[p]).collect(),
        vote_fractions: order.iter().map(|&p| agg[p]).collect(),
        mean_probs: order.iter().map(|&p| means[p]).collect(),
        retained_views: retained,
    })
}

/// Embeds-to-candidates convenience wrapper around [`explore_topk`].
pub fn explore(
    view_embeddings: &[Vec<f64>],
    class_embeddings: &[Vec<f64>],
    classes: &[usize],
    beta: f64,
    cfg: &ExploreConfig,
) -> Result<CandidateSet> {
    let scores = ScoreMatrix::compute(view_embeddings, class_embeddings, classes, beta)?;
    explore_topk(&scores, cfg)
}

/// Single-winner exploration over a candidate subset.
pub fn predict_single(scores: &ScoreMatrix, rho: f64, aggregation: Aggregation) -> Result<usize> {
    let cfg = ExploreConfig {
        rho,
        top_k: 1,
        aggregation,
    };
    Ok(explore_topk(scores, &cfg)?.top())
}
