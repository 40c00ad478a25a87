//! Proxy reconstruction on an image-level toy world.
//!
//! Each image has three vertical bands: a pattern unique to class 1 on the
//! left, a shared pattern in the middle and a pattern unique to class 2 on
//! the right. Class 1's text embedding points at the visual response of the
//! shared band plus its own band, class 2's likewise; one distractor points
//! at both unique bands and the rest are random. Evidence maps are localized
//! with the production occlusion code, and the common and unique evidence
//! embeddings are compared with the full-image embedding.

use serde::{Deserialize, Serialize};

use crate::encoders::{ImageTensor, ToyVisualConfig, ToyVisualEncoder, VisualEncoder};
use crate::error::{FclError, Result};
use crate::evidence::{common_evidence_embedding, localize, unique_evidence_embedding, EvidenceConfig};
use crate::numerics::{cosine, l2_normalize, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxyConfig {
    pub visual: ToyVisualConfig,
    pub evidence: EvidenceConfig,
    pub n_distractors: usize,
    /// Range of the shared band's share of the image width.
    pub common_width: (f64, f64),
    /// Weight of each unique embedding in the proxy sum.
    pub unique_weight: f64,
    pub beta: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            visual: ToyVisualConfig::default(),
            evidence: EvidenceConfig {
                n_masks: 128,
                ..EvidenceConfig::default()
            },
            n_distractors: 3,
            common_width: (0.3, 0.5),
            unique_weight: 0.1,
            beta: 20.0,
        }
    }
}

/// Cosines of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyInstance {
    pub trial: u64,
    /// `cos(z, z_com)`, `cos(z, z_uniq_1)`, `cos(z, z_uniq_2)`.
    pub component: [f64; 3],
    /// `cos(z, z_com + w z_uniq_1 + w z_uniq_2)`.
    pub proxy_sum: f64,
    /// Cosines of `z_com` with the planted shared, unique-1 and unique-2
    /// band responses.
    pub common_vs_planted: [f64; 3],
    /// Cosines of `z_uniq_1` with the same three planted responses.
    pub unique1_vs_planted: [f64; 3],
    pub unique_fallback: bool,
}

impl ProxyInstance {
    pub fn reconstructs(&self) -> bool {
        self.component.iter().all(|&c| self.proxy_sum > c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyReport {
    pub instances: Vec<ProxyInstance>,
    pub n_reconstructing: usize,
    pub mean_component: [f64; 3],
    pub mean_proxy_sum: f64,
}

/// Image whose band `[lo, hi)` of columns holds `pattern` and is black elsewhere.
fn band(h: usize, w: usize, lo: usize, hi: usize, pattern: &[f64]) -> Result<ImageTensor> {
    let mut data = vec![0.0; h * w * 3];
    for y in 0..h {
        for x in lo..hi {
            for ch in 0..3 {
                let i = (y * w + x) * 3 + ch;
                data[i] = pattern[i];
            }
        }
    }
    ImageTensor::new(h, w, data)
}

pub fn proxy_instance(visual: &ToyVisualEncoder, cfg: &ProxyConfig, seed: u64, trial: u64) -> Result<ProxyInstance> {
    let (h, w) = visual.input_size();
    let mut rng = RngStream::for_purpose(seed, trial, "proxy-world");
    let frac = cfg.common_width.0 + (cfg.common_width.1 - cfg.common_width.0) * rng.uniform();
    let com_w = ((frac * w as f64).round() as usize).clamp(1, w.saturating_sub(2).max(1));
    let left = (w - com_w) / 2;
    let bounds = [(0, left), (left, left + com_w), (left + com_w, w)];
    if bounds.iter().any(|(lo, hi)| hi <= lo) {
        return Err(FclError::invalid(
            "proxy.visual.width",
            "image too narrow for three bands",
        ));
    }
    let pattern: Vec<f64> = (0..h * w * 3).map(|_| rng.uniform()).collect();
    let image = ImageTensor::new(h, w, pattern.clone())?;
    // Planted responses in order: unique 1, shared, unique 2.
    let planted: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| l2_normalize(&visual.linear_response(&band(h, w, lo, hi, &pattern)?)?))
        .collect::<Result<_>>()?;
    let (u1, com, u2) = (&planted[0], &planted[1], &planted[2]);
    let sum = |a: &[f64], b: &[f64]| -> Result<Vec<f64>> {
        l2_normalize(&a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>())
    };
    // One plausible distractor shares both unique bands but not the shared
    // one, so occluding the shared band moves mass away from classes 1 and 2.
    let mut texts = vec![sum(com, u1)?, sum(com, u2)?, sum(u1, u2)?];
    for _ in 1..cfg.n_distractors {
        texts.push(l2_normalize(&rng.gaussian_vec(visual.dim()))?);
    }
    let candidates: Vec<usize> = (0..texts.len()).collect();
    let mut mask_rng = RngStream::for_purpose(seed, trial, "proxy-masks");
    let ev = localize(
        visual,
        &image,
        &candidates,
        &texts,
        cfg.beta,
        &cfg.evidence,
        &mut mask_rng,
    )?;
    let q = ev.common(0, 1)?;
    let z_com = common_evidence_embedding(visual, &image, &q)?;
    let (z_u1, fb1) = unique_evidence_embedding(visual, &image, &ev.spatial[0], &q)?;
    let (z_u2, fb2) = unique_evidence_embedding(visual, &image, &ev.spatial[1], &q)?;
    let z = visual.encode(&image)?;
    let proxy: Vec<f64> = (0..z.len())
        .map(|i| z_com[i] + cfg.unique_weight * (z_u1[i] + z_u2[i]))
        .collect();
    let against = |v: &[f64]| [cosine(v, com), cosine(v, u1), cosine(v, u2)];
    Ok(ProxyInstance {
        trial,
        component: [cosine(&z, &z_com), cosine(&z, &z_u1), cosine(&z, &z_u2)],
        proxy_sum: cosine(&z, &proxy),
        common_vs_planted: against(&z_com),
        unique1_vs_planted: against(&z_u1),
        unique_fallback: fb1 || fb2,
    })
}

pub fn proxy_reconstruction(cfg: &ProxyConfig, n_instances: usize, seed: u64) -> Result<ProxyReport> {
    cfg.evidence.validate()?;
    let visual = ToyVisualEncoder::new(cfg.visual)?;
    let instances: Vec<ProxyInstance> = (0..n_instances as u64)
        .map(|t| proxy_instance(&visual, cfg, seed, t))
        .collect::<Result<_>>()?;
    let n = instances.len().max(1) as f64;
    let mut mean_component = [0.0; 3];
    for inst in &instances {
        for (m, c) in mean_component.iter_mut().zip(inst.component) {
            *m += c / n;
        }
    }
    Ok(ProxyReport {
        n_reconstructing: instances.iter().filter(|i| i.reconstructs()).count(),
        mean_proxy_sum: instances.iter().map(|i| i.proxy_sum).sum::<f64>() / n,
        mean_component,
        instances,
    })
}
