//! Visual and text encoder contracts.
//!
//! Two backends implement them: a toy backend (seeded dense maps with exact
//! analytic gradients) and, behind the `graph` feature, ONNX graphs exported
//! from a pretrained model.

mod image;
mod manifest;
mod table;
mod toy;
mod vocab;

#[cfg(feature = "graph")]
mod graph;

pub use image::{ImageTensor, CLIP_MEAN, CLIP_STD};
pub use manifest::{sha256_file, ExportManifest, VerifiedExport};
pub use table::ClassTokenTable;
pub use toy::{ToyTextConfig, ToyTextEncoder, ToyVisualConfig, ToyVisualEncoder};
pub use vocab::{ClassVocabulary, DEFAULT_TEMPLATE, GENERIC_TEMPLATES};

#[cfg(feature = "graph")]
pub use graph::{GraphConfig, GraphTextEncoder, GraphVisualEncoder};

use serde::{Deserialize, Serialize};

use crate::error::{FclError, Result};
use crate::numerics::dot;

/// How the learnable context enters the text encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum PromptMode {
    /// The context tokens replace the hard prompt ("a photo of a") and are
    /// initialised from its token embeddings.
    #[default]
    #[serde(rename = "cl")]
    SoftContext,
    /// The hard prompt stays fixed and learnable tokens are prepended.
    #[serde(rename = "cl-hp")]
    HardPromptPrefix,
}

/// Learnable context tokens, `n_ctx x d_token`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextParams {
    pub n_ctx: usize,
    pub d_token: usize,
    pub mode: PromptMode,
    pub tokens: Vec<f64>,
}

impl ContextParams {
    pub fn new(n_ctx: usize, d_token: usize, mode: PromptMode, tokens: Vec<f64>) -> Result<Self> {
        if tokens.len() != n_ctx * d_token {
            return Err(FclError::shape("context tokens", n_ctx * d_token, tokens.len()));
        }
        if tokens.iter().any(|t| !t.is_finite()) {
            return Err(FclError::NonFinite("context tokens"));
        }
        Ok(Self {
            n_ctx,
            d_token,
            mode,
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.tokens[i * self.d_token..(i + 1) * self.d_token]
    }

    /// Copy with `tokens[index] += delta`.
    pub fn perturbed(&self, index: usize, delta: f64) -> Self {
        let mut out = self.clone();
        out.tokens[index] += delta;
        out
    }

    pub fn distance(&self, other: &ContextParams) -> f64 {
        self.tokens
            .iter()
            .zip(&other.tokens)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Similarity temperature and embedding width shared by both encoders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub beta: f64,
    pub d: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { beta: 20.0, d: 64 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(FclError::invalid(
                "encoder.beta",
                format!("must be > 0, got {}", self.beta),
            ));
        }
        if self.d == 0 {
            return Err(FclError::invalid("encoder.d", "must be >= 1"));
        }
        Ok(())
    }
}

/// Maps an image to a unit-norm embedding.
pub trait VisualEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// `(height, width)` the encoder expects.
    fn input_size(&self) -> (usize, usize);

    fn encode(&self, image: &ImageTensor) -> Result<Vec<f64>>;

    fn encode_batch(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        images.iter().map(|img| self.encode(img)).collect()
    }

    fn check_input(&self, image: &ImageTensor) -> Result<()> {
        let (want_h, want_w) = self.input_size();
        if image.height() != want_h || image.width() != want_w {
            return Err(FclError::Resolution {
                want_h,
                want_w,
                got_h: image.height(),
                got_w: image.width(),
            });
        }
        if image.is_normalized() {
            return Err(FclError::Degenerate(
                "encoders take raw [0, 1] images and standardize internally".into(),
            ));
        }
        Ok(())
    }
}

/// Maps `(class, context)` to a unit-norm text embedding.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;

    fn vocabulary(&self) -> &ClassVocabulary;

    fn num_classes(&self) -> usize {
        self.vocabulary().len()
    }

    /// Base context `delta_0` for the given prompt mode.
    fn initial_context(&self, mode: PromptMode) -> ContextParams;

    fn encode(&self, class: usize, ctx: &ContextParams) -> Result<Vec<f64>>;

    /// `d <encode(class, ctx), upstream> / d ctx`, flattened like `ctx.tokens`.
    ///
    /// Forward-only backends fall back to central differences.
    fn vjp(&self, class: usize, ctx: &ContextParams, upstream: &[f64]) -> Result<Vec<f64>> {
        finite_diff_vjp(self, class, ctx, upstream, 1e-5)
    }

    fn encode_all(&self, classes: &[usize], ctx: &ContextParams) -> Result<Vec<Vec<f64>>> {
        classes.iter().map(|&c| self.encode(c, ctx)).collect()
    }
}

/// Central-difference estimate of [`TextEncoder::vjp`].
///
/// Costs `2 * ctx.len()` forward passes.
pub fn finite_diff_vjp<E: TextEncoder + ?Sized>(
    encoder: &E,
    class: usize,
    ctx: &ContextParams,
    upstream: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(FclError::invalid("h", "finite-difference step must be > 0"));
    }
    if upstream.len() != encoder.dim() {
        return Err(FclError::shape("vjp upstream", encoder.dim(), upstream.len()));
    }
    let mut grad = vec![0.0; ctx.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let plus = encoder.encode(class, &ctx.perturbed(i, h))?;
        let minus = encoder.encode(class, &ctx.perturbed(i, -h))?;
        *g = (dot(&plus, upstream) - dot(&minus, upstream)) / (2.0 * h);
    }
    Ok(grad)
}

/// `beta * <z, tau>`.
pub fn similarity(z: &[f64], tau: &[f64], beta: f64) -> Result<f64> {
    if z.len() != tau.len() {
        return Err(FclError::shape("similarity", z.len(), tau.len()));
    }
    Ok(beta * dot(z, tau))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_examples() {
        let z = [0.6, 0.8];
        assert!((similarity(&z, &z, 20.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(similarity(&[1.0, 0.0], &[0.0, 1.0], 20.0).unwrap(), 0.0);
        assert!(similarity(&[1.0], &[1.0, 0.0], 20.0).is_err());
    }

    #[test]
    fn similarity_matches_compensated_sum() {
        use crate::numerics::{l2_normalize, RngStream};
        let mut rng = RngStream::new(11, 0);
        for _ in 0..50 {
            let a: Vec<f64> = (0..64).map(|_| rng.gaussian()).collect();
            let b: Vec<f64> = (0..64).map(|_| rng.gaussian()).collect();
            let (a, b) = (l2_normalize(&a).unwrap(), l2_normalize(&b).unwrap());
            // Kahan-compensated reference.
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for (x, y) in a.iter().zip(&b) {
                let term = x * y - comp;
                let t = sum + term;
                comp = (t - sum) - term;
                sum = t;
            }
            let s = similarity(&a, &b, 20.0).unwrap();
            assert!((s - 20.0 * sum).abs() < 1e-12);
            assert!(s.abs() <= 20.0 + 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let bad = EncoderConfig { beta: 0.0, d: 4 };
        assert!(bad.validate().is_err());
    }
}
