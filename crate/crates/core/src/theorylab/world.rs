//! Worlds where the additive evidence decomposition holds by construction.
//!
//! One shared component `z_com`, one unique component per class and one
//! residual direction per class are drawn and Gram-Schmidt orthonormalized.
//! Text embeddings are unit vectors with prescribed alignments to them, and
//! views mix the components with per-view magnitudes plus isotropic noise.

use serde::{Deserialize, Serialize};

use crate::encoders::{ClassVocabulary, PromptMode, TextEncoder, ToyTextConfig, ToyTextEncoder};
use crate::error::{FclError, Result};
use crate::numerics::{dot, l2_normalize, norm, RngStream};

/// Alignment layout of a world's text embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub d: usize,
    pub n_classes: usize,
    /// `<z_com, tau_c>` per class; missing entries repeat the last one.
    pub common_alignment: Vec<f64>,
    /// `<z_uniq_c, tau_c>`.
    pub unique_alignment: f64,
    /// `<z_uniq_i, tau_c>` for `i != c`.
    pub cross_unique_alignment: f64,
    /// Standard deviation of the norm of view noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            d: 64,
            n_classes: 10,
            common_alignment: vec![0.5],
            unique_alignment: 0.6,
            cross_unique_alignment: 0.0,
            noise: 0.0,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn common_alignment_of(&self, class: usize) -> f64 {
        let a = &self.common_alignment;
        a.get(class).or(a.last()).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(FclError::invalid("world.n_classes", "need at least two classes"));
        }
        if self.d < 1 + 2 * self.n_classes {
            return Err(FclError::invalid(
                "world.d",
                format!("need d >= 1 + 2C = {}, got {}", 1 + 2 * self.n_classes, self.d),
            ));
        }
        if self.common_alignment.is_empty() {
            return Err(FclError::invalid("world.common_alignment", "must not be empty"));
        }
        if !(self.noise >= 0.0) {
            return Err(FclError::invalid("world.noise", "must be >= 0"));
        }
        for c in 0..self.n_classes {
            let planted = self.common_alignment_of(c).powi(2)
                + self.unique_alignment.powi(2)
                + (self.n_classes - 1) as f64 * self.cross_unique_alignment.powi(2);
            if planted > 1.0 {
                return Err(FclError::invalid(
                    "world",
                    format!("class {c}: planted alignments have squared norm {planted:.3} > 1"),
                ));
            }
        }
        Ok(())
    }
}

/// Orthonormalizes `vectors` in order (classical Gram-Schmidt, applied twice).
pub fn gram_schmidt(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&w, b);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= p * bi;
                }
            }
        }
        if norm(&w) < 1e-8 * norm(v).max(1.0) {
            return Err(FclError::Degenerate("linearly dependent draw".into()));
        }
        basis.push(l2_normalize(&w)?);
    }
    Ok(basis)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub spec: WorldSpec,
    pub common: Vec<f64>,
    pub unique: Vec<Vec<f64>>,
    pub residual: Vec<Vec<f64>>,
    /// Unit-norm text embeddings at the base context.
    pub text: Vec<Vec<f64>>,
}

impl SyntheticWorld {
    pub fn new(spec: WorldSpec) -> Result<Self> {
        spec.validate()?;
        let c = spec.n_classes;
        let mut rng = RngStream::new(spec.seed, 0x77_6f72_6c64);
        let draws: Vec<Vec<f64>> = (0..1 + 2 * c).map(|_| rng.gaussian_vec(spec.d)).collect();
        let mut basis = gram_schmidt(&draws)?.into_iter();
        let common = basis.next().expect("drawn");
        let unique: Vec<Vec<f64>> = basis.by_ref().take(c).collect();
        let residual: Vec<Vec<f64>> = basis.collect();
        let text = (0..c)
            .map(|k| {
                let alpha = spec.common_alignment_of(k);
                let mut t: Vec<f64> = common.iter().map(|v| alpha * v).collect();
                let mut sq = alpha * alpha;
                for (i, u) in unique.iter().enumerate() {
                    let g = if i == k {
                        spec.unique_alignment
                    } else {
                        spec.cross_unique_alignment
                    };
                    sq += g * g;
                    for (ti, ui) in t.iter_mut().zip(u) {
                        *ti += g * ui;
                    }
                }
                let rest = (1.0 - sq).max(0.0).sqrt();
                for (ti, ri) in t.iter_mut().zip(&residual[k]) {
                    *ti += rest * ri;
                }
                t
            })
            .collect();
        Ok(Self {
            spec,
            common,
            unique,
            residual,
            text,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    /// A view with the given magnitudes; noise is drawn from `rng`.
    pub fn view(&self, a_common: f64, a_unique: &[f64], rng: &mut RngStream) -> Result<SyntheticView> {
        if a_unique.len() != self.n_classes() {
            return Err(FclError::shape("unique magnitudes", self.n_classes(), a_unique.len()));
        }
        let scale = self.spec.noise / (self.d() as f64).sqrt();
        let noise: Vec<f64> = (0..self.d()).map(|_| scale * rng.gaussian()).collect();
        let mut raw = noise.clone();
        for (r, c) in raw.iter_mut().zip(&self.common) {
            *r += a_common * c;
        }
        for (a, u) in a_unique.iter().zip(&self.unique) {
            for (r, ui) in raw.iter_mut().zip(u) {
                *r += a * ui;
            }
        }
        let embedding = l2_normalize(&raw)?;
        Ok(SyntheticView {
            a_common,
            a_unique: a_unique.to_vec(),
            noise,
            raw,
            embedding,
        })
    }

    /// Toy text encoder whose base-context embeddings equal `self.text`.
    pub fn planted_text_encoder(&self, mut cfg: ToyTextConfig, mode: PromptMode) -> Result<ToyTextEncoder> {
        cfg.d = self.d();
        cfg.d_class = self.d();
        let names: Vec<String> = (0..self.n_classes()).map(|c| format!("class{c}")).collect();
        let placeholder = ToyTextEncoder::hashed_vocabulary(&cfg, names.clone(), "{}")?;
        let mut enc = ToyTextEncoder::new(cfg.clone(), placeholder)?;
        let ctx0 = enc.initial_context(mode);
        let rows = self
            .text
            .iter()
            .map(|t| enc.class_embedding_for(t, &ctx0))
            .collect::<Result<Vec<_>>>()?;
        enc.set_vocabulary(ClassVocabulary::new(names, "{}", 1, cfg.d_class, rows)?)?;
        Ok(enc)
    }
}

/// One realized view `z = normalize(a_com z_com + sum a_i z_uniq_i + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticView {
    pub a_common: f64,
    pub a_unique: Vec<f64>,
    pub noise: Vec<f64>,
    /// Pre-normalization combination.
    pub raw: Vec<f64>,
    pub embedding: Vec<f64>,
}
