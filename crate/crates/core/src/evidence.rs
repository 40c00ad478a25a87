//! Occlusion-based evidence localization.
//!
//! Random grid masks black out part of the image; the rise in each candidate's
//! negative log-probability, spread back over the occluded pixels, gives a
//! per-class evidence map `E_c`. A pixel softmax turns it into `S_c`, and the
//! normalized product `Q_ij` of two such maps marks regions both classes rely
//! on.
//!
//! Probability maps scale as `1 / (H W)`, so before any map weights the image
//! it is rescaled by its maximum to `[0, 1]`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{ImageTensor, VisualEncoder};
use crate::error::{FclError, Result};
use crate::numerics::{dot, log_sum_exp, softmax_unchecked, RngStream, PROB_SUM_TOL};

/// Weights whose maximum falls below this are treated as blank.
const DEGENERATE_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvidenceConfig {
    pub n_masks: usize,
    pub grid_sizes: Vec<usize>,
    /// Fraction of grid cells occluded per mask.
    pub gamma: f64,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        Self {
            n_masks: 400,
            grid_sizes: vec![7, 9, 11, 13],
            gamma: 0.5,
        }
    }
}

impl EvidenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_masks == 0 {
            return Err(FclError::invalid("evidence.n_masks", "must be >= 1"));
        }
        if self.grid_sizes.is_empty() {
            return Err(FclError::invalid("evidence.grid_sizes", "must not be empty"));
        }
        if let Some(g) = self.grid_sizes.iter().find(|&&g| g < 2) {
            return Err(FclError::invalid("evidence.grid_sizes", format!("grid size {g} < 2")));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(FclError::invalid(
                "evidence.gamma",
                format!("must be in (0, 1), got {}", self.gamma),
            ));
        }
        Ok(())
    }

    /// `round(gamma g^2)` clamped to `[1, g^2 - 1]`.
    pub fn cells_masked(&self, grid: usize) -> usize {
        let total = grid * grid;
        ((self.gamma * total as f64).round() as usize).clamp(1, total - 1)
    }
}

/// A random set of occluded cells on a `grid x grid` partition of the image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub grid: usize,
    /// Row-major cell indices, ascending.
    pub cells: Vec<usize>,
    pub height: usize,
    pub width: usize,
}

impl MaskSpec {
    pub fn new(grid: usize, mut cells: Vec<usize>, height: usize, width: usize) -> Result<Self> {
        if grid == 0 {
            return Err(FclError::invalid("mask.grid", "must be >= 1"));
        }
        cells.sort_unstable();
        cells.dedup();
        if let Some(&c) = cells.iter().find(|&&c| c >= grid * grid) {
            return Err(FclError::invalid(
                "mask.cells",
                format!("cell {c} outside a {grid}x{grid} grid"),
            ));
        }
        Ok(Self {
            grid,
            cells,
            height,
            width,
        })
    }

    /// Pixel-level occlusion map, `height * width`, row-major.
    pub fn pixel_mask(&self) -> Vec<bool> {
        let mut out = vec![false; self.height * self.width];
        for &cell in &self.cells {
            let (rows, cols) = (
                block_span(cell / self.grid, self.height, self.grid),
                block_span(cell % self.grid, self.width, self.grid),
            );
            for y in rows {
                out[y * self.width + cols.start..y * self.width + cols.end].fill(true);
            }
        }
        out
    }
}

/// Block `b` of `n` split into `g` balanced parts: `floor(b n / g) .. floor((b + 1) n / g)`.
pub fn block_span(b: usize, n: usize, g: usize) -> std::ops::Range<usize> {
    (b * n / g)..((b + 1) * n / g)
}

pub fn sample_masks(cfg: &EvidenceConfig, height: usize, width: usize, rng: &mut RngStream) -> Result<Vec<MaskSpec>> {
    cfg.validate()?;
    let mut masks = Vec::with_capacity(cfg.n_masks);
    for _ in 0..cfg.n_masks {
        let grid = cfg.grid_sizes[rng.random_range(0..cfg.grid_sizes.len())];
        let cells = index::sample(rng, grid * grid, cfg.cells_masked(grid)).into_vec();
        masks.push(MaskSpec::new(grid, cells, height, width)?);
    }
    Ok(masks)
}

/// Per-pixel class importance; may be negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Pixel softmax of an [`EvidenceMap`]; positive and summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialProbMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Normalized product of two spatial maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonEvidenceMap {
    pub pair: (usize, usize),
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Restricted log-posterior of an image over candidate text embeddings.
pub fn candidate_log_posterior(z: &[f64], candidate_embeddings: &[Vec<f64>], beta: f64) -> Vec<f64> {
    let scores: Vec<f64> = candidate_embeddings.iter().map(|t| beta * dot(z, t)).collect();
    let lse = log_sum_exp(&scores);
    scores.iter().map(|s| s - lse).collect()
}

/// `-log pi(c | x^(n)) + log pi(c | x)` for every candidate position, given
/// both log-posteriors.
pub fn delta_loss(base_log_post: &[f64], masked_log_post: &[f64]) -> Vec<f64> {
    base_log_post.iter().zip(masked_log_post).map(|(b, m)| b - m).collect()
}

/// `delta_loss` for every mask, `[mask][candidate position]`.
///
/// The unmasked posterior is computed once; each mask costs one forward pass.
pub fn mask_delta_losses<V: VisualEncoder + ?Sized>(
    visual: &V,
    image: &ImageTensor,
    masks: &[MaskSpec],
    candidate_embeddings: &[Vec<f64>],
    beta: f64,
) -> Result<Vec<Vec<f64>>> {
    if candidate_embeddings.is_empty() {
        return Err(FclError::EmptyCandidates);
    }
    let base = candidate_log_posterior(&visual.encode(image)?, candidate_embeddings, beta);
    masks
        .iter()
        .map(|m| {
            if m.height != image.height() || m.width != image.width() {
                return Err(FclError::shape("mask size", image.num_pixels(), m.height * m.width));
            }
            let z = visual.encode(&image.occluded(&m.pixel_mask())?)?;
            Ok(delta_loss(
                &base,
                &candidate_log_posterior(&z, candidate_embeddings, beta),
            ))
        })
        .collect()
}

/// `E(u, v) = (1 / N_m) sum_n delta_n M_n(u, v)`, summed in mask order.
pub fn class_evidence_map(masks: &[MaskSpec], deltas: &[f64]) -> Result<EvidenceMap> {
    if masks.is_empty() {
        return Err(FclError::Degenerate("evidence needs at least one mask".into()));
    }
    if deltas.len() != masks.len() {
        return Err(FclError::shape("mask losses", masks.len(), deltas.len()));
    }
    if deltas.iter().any(|d| !d.is_finite()) {
        return Err(FclError::NonFinite("mask losses"));
    }
    let (height, width) = (masks[0].height, masks[0].width);
    let mut values = vec![0.0; height * width];
    for (mask, &delta) in masks.iter().zip(deltas) {
        if mask.height != height || mask.width != width {
            return Err(FclError::shape("mask size", height * width, mask.height * mask.width));
        }
        for (v, covered) in values.iter_mut().zip(mask.pixel_mask()) {
            if covered {
                *v += delta;
            }
        }
    }
    let n = masks.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(EvidenceMap { height, width, values })
}

pub fn spatial_softmax(e: &EvidenceMap) -> Result<SpatialProbMap> {
    if e.values.is_empty() {
        return Err(FclError::Degenerate("empty evidence map".into()));
    }
    if e.values.iter().any(|v| !v.is_finite()) {
        return Err(FclError::NonFinite("evidence map"));
    }
    Ok(SpatialProbMap {
        height: e.height,
        width: e.width,
        values: softmax_unchecked(&e.values),
    })
}

pub fn common_evidence_map(
    pair: (usize, usize),
    s_i: &SpatialProbMap,
    s_j: &SpatialProbMap,
) -> Result<CommonEvidenceMap> {
    if s_i.values.len() != s_j.values.len() {
        return Err(FclError::shape("spatial map pair", s_i.values.len(), s_j.values.len()));
    }
    let product: Vec<f64> = s_i.values.iter().zip(&s_j.values).map(|(a, b)| a * b).collect();
    let total: f64 = product.iter().sum();
    if !(total > 0.0) {
        return Err(FclError::Degenerate("spatial maps share no mass".into()));
    }
    Ok(CommonEvidenceMap {
        pair,
        height: s_i.height,
        width: s_i.width,
        values: product.iter().map(|p| p / total).collect(),
    })
}

/// Divides by the maximum so the peak becomes exactly one.
pub fn rescale_by_max(values: &[f64]) -> Result<Vec<f64>> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return Err(FclError::Degenerate("map has no positive maximum".into()));
    }
    Ok(values.iter().map(|v| v / max).collect())
}

/// `f_v(x * rescale(Q))`.
pub fn common_evidence_embedding<V: VisualEncoder + ?Sized>(
    visual: &V,
    image: &ImageTensor,
    q: &CommonEvidenceMap,
) -> Result<Vec<f64>> {
    visual.encode(&image.weighted(&rescale_by_max(&q.values)?)?)
}

/// Pixel weights `rescale(S) (1 - rescale(Q))`, or `rescale(S)` alone when
/// that product vanishes everywhere. The flag reports the fallback.
pub fn unique_weights(s: &SpatialProbMap, q: &CommonEvidenceMap) -> Result<(Vec<f64>, bool)> {
    if s.values.len() != q.values.len() {
        return Err(FclError::shape("unique-evidence maps", s.values.len(), q.values.len()));
    }
    let rs = rescale_by_max(&s.values)?;
    let rq = rescale_by_max(&q.values)?;
    let w: Vec<f64> = rs.iter().zip(&rq).map(|(a, b)| a * (1.0 - b)).collect();
    if w.iter().copied().fold(0.0, f64::max) < DEGENERATE_WEIGHT {
        return Ok((rs, true));
    }
    Ok((w, false))
}

/// `f_v(x * rescale(S) (1 - rescale(Q)))`, with the fallback flag of
/// [`unique_weights`].
pub fn unique_evidence_embedding<V: VisualEncoder + ?Sized>(
    visual: &V,
    image: &ImageTensor,
    s: &SpatialProbMap,
    q: &CommonEvidenceMap,
) -> Result<(Vec<f64>, bool)> {
    let (w, fell_back) = unique_weights(s, q)?;
    Ok((visual.encode(&image.weighted(&w)?)?, fell_back))
}

/// Evidence maps for every candidate of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEvidence {
    pub candidates: Vec<usize>,
    pub evidence: Vec<EvidenceMap>,
    pub spatial: Vec<SpatialProbMap>,
}

impl CandidateEvidence {
    pub fn position(&self, class: usize) -> Result<usize> {
        self.candidates
            .iter()
            .position(|&c| c == class)
            .ok_or(FclError::UnknownClass(class))
    }

    pub fn spatial_for(&self, class: usize) -> Result<&SpatialProbMap> {
        Ok(&self.spatial[self.position(class)?])
    }

    pub fn common(&self, i: usize, j: usize) -> Result<CommonEvidenceMap> {
        common_evidence_map((i, j), self.spatial_for(i)?, self.spatial_for(j)?)
    }
}

/// Samples masks and builds `E_c` and `S_c` for all candidates.
pub fn localize<V: VisualEncoder + ?Sized>(
    visual: &V,
    image: &ImageTensor,
    candidates: &[usize],
    candidate_embeddings: &[Vec<f64>],
    beta: f64,
    cfg: &EvidenceConfig,
    rng: &mut RngStream,
) -> Result<CandidateEvidence> {
    if candidates.len() != candidate_embeddings.len() {
        return Err(FclError::shape(
            "candidate embeddings",
            candidates.len(),
            candidate_embeddings.len(),
        ));
    }
    let masks = sample_masks(cfg, image.height(), image.width(), rng)?;
    let deltas = mask_delta_losses(visual, image, &masks, candidate_embeddings, beta)?;
    let mut evidence = Vec::with_capacity(candidates.len());
    let mut spatial = Vec::with_capacity(candidates.len());
    for k in 0..candidates.len() {
        let per_mask: Vec<f64> = deltas.iter().map(|row| row[k]).collect();
        let e = class_evidence_map(&masks, &per_mask)?;
        spatial.push(spatial_softmax(&e)?);
        evidence.push(e);
    }
    Ok(CandidateEvidence {
        candidates: candidates.to_vec(),
        evidence,
        spatial,
    })
}

/// True when `values` is positive and sums to one within tolerance.
pub fn is_probability_map(values: &[f64]) -> bool {
    !values.is_empty()
        && values.iter().all(|&v| v > 0.0 && v <= 1.0)
        && (values.iter().sum::<f64>() - 1.0).abs() <= PROB_SUM_TOL
}
