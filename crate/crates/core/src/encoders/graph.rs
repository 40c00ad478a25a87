//! ONNX graph backend, run through tract.
//!
//! The vision graph maps standardized `[N, 3, H, W]` images to `[N, d]`
//! features. The text graph takes token embeddings `[B, S, d_token]`, the
//! context tokens followed by the class tokens, and returns `[B, d]`; keeping
//! the context at the embedding level is what lets `delta` be optimized
//! without a tokenizer. Both graphs are forward-only, so text gradients use
//! central differences in f32-appropriate steps.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;
use tract_onnx::tract_core::dims;

use super::manifest::{ExportManifest, VerifiedExport};
use super::{
    finite_diff_vjp, ClassVocabulary, ContextParams, ImageTensor, PromptMode, TextEncoder, VisualEncoder, CLIP_MEAN,
    CLIP_STD,
};
use crate::error::{FclError, Result};
use crate::numerics::{l2_normalize, stable_hash, RngStream};

type Plan = Arc<TypedRunnableModel>;

fn backend(e: impl std::fmt::Display) -> FclError {
    FclError::Backend(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Path of the export manifest; artifact paths resolve against its directory.
    pub manifest: PathBuf,
    /// Learnable prefix tokens in CL-HP mode.
    pub n_prefix: usize,
    /// Standard deviation of the CL-HP prefix initialisation.
    pub prefix_scale: f64,
    /// Central-difference step for text gradients. The graphs run in f32, so
    /// steps near 1e-5 drown in rounding noise.
    pub fd_step: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("export/manifest.json"),
            n_prefix: 4,
            prefix_scale: 0.02,
            fd_step: 1e-3,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(FclError::invalid("graph.fd_step", "must be > 0"));
        }
        if !(self.prefix_scale >= 0.0 && self.prefix_scale.is_finite()) {
            return Err(FclError::invalid("graph.prefix_scale", "must be >= 0"));
        }
        Ok(())
    }
}

/// Loads, pins the input fact (built from the model's symbol table) and optimizes.
fn load_plan(path: &Path, fact: impl FnOnce(&InferenceModel) -> InferenceFact) -> Result<Plan> {
    tract_onnx::onnx()
        .model_for_path(path)
        .and_then(|m| {
            let f = fact(&m);
            m.with_input_fact(0, f)
        })
        .and_then(|m| m.into_optimized())
        .and_then(|m| m.into_runnable())
        .map_err(|e| FclError::Backend(format!("{}: {e}", path.display())))
}

/// Runs `plan` on one f32 tensor and returns the rows of its `[rows, d]` output.
fn run_rows(plan: &Plan, shape: &[usize], data: Vec<f32>, d: usize) -> Result<Vec<Vec<f64>>> {
    let input = Tensor::from_shape(shape, &data).map_err(backend)?;
    let out = plan.run(tvec!(input.into())).map_err(backend)?;
    let view = out[0].to_plain_array_view::<f32>().map_err(backend)?;
    let rows = shape[0];
    if view.shape() != [rows, d] {
        return Err(FclError::Backend(format!(
            "graph output shape {:?}, expected [{rows}, {d}]",
            view.shape()
        )));
    }
    view.as_slice()
        .ok_or_else(|| FclError::Backend("non-contiguous graph output".into()))?
        .chunks(d)
        .map(|row| l2_normalize(&row.iter().map(|&v| v as f64).collect::<Vec<_>>()))
        .collect()
}

pub struct GraphVisualEncoder {
    plan: Plan,
    size: usize,
    d: usize,
}

impl GraphVisualEncoder {
    pub fn load(path: &Path, image_size: usize, d: usize) -> Result<Self> {
        let plan = load_plan(path, |m| f32::fact(dims!(m.sym("n"), 3, image_size, image_size)).into())?;
        Ok(Self {
            plan,
            size: image_size,
            d,
        })
    }

    pub fn from_export(export: &VerifiedExport) -> Result<Self> {
        Self::load(&export.vision_path(), export.manifest.image_size, export.manifest.d)
    }
}

impl VisualEncoder for GraphVisualEncoder {
    fn dim(&self) -> usize {
        self.d
    }

    fn input_size(&self) -> (usize, usize) {
        (self.size, self.size)
    }

    fn encode(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.encode_batch(std::slice::from_ref(image))?.remove(0))
    }

    fn encode_batch(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let mut data = Vec::with_capacity(images.len() * 3 * self.size * self.size);
        for img in images {
            self.check_input(img)?;
            data.extend(img.standardized(CLIP_MEAN, CLIP_STD).to_chw().iter().map(|&v| v as f32));
        }
        run_rows(&self.plan, &[images.len(), 3, self.size, self.size], data, self.d)
    }
}

pub struct GraphTextEncoder {
    plan: Plan,
    vocab: ClassVocabulary,
    d: usize,
    d_token: usize,
    /// Hard-prompt token embeddings, `n_ctx x d_token`.
    hard: Vec<f64>,
    prefix_init: Vec<f64>,
    fd_step: f64,
}

impl GraphTextEncoder {
    pub fn from_export(export: &VerifiedExport, names: Vec<String>, cfg: &GraphConfig) -> Result<Self> {
        cfg.validate()?;
        let m = &export.manifest;
        let template = m.templates[0].clone();
        let vocab = ClassVocabulary::from_table(names, &template, &export.classes)?;
        let d_token = m.d_token;
        let plan = load_plan(&export.text_path(), |g| {
            f32::fact(dims!(g.sym("b"), g.sym("s"), d_token)).into()
        })?;
        let mut rng = RngStream::new(stable_hash(m.source_model.as_bytes()), stable_hash(b"cl-hp-prefix"));
        let prefix_init = (0..cfg.n_prefix * m.d_token)
            .map(|_| cfg.prefix_scale * rng.gaussian())
            .collect();
        Ok(Self {
            plan,
            vocab,
            d: m.d,
            d_token: m.d_token,
            hard: export.context.class_row(0),
            prefix_init,
            fd_step: cfg.fd_step,
        })
    }

    /// Convenience: verify the manifest and load both encoders.
    pub fn load_pair(cfg: &GraphConfig, names: Vec<String>) -> Result<(GraphVisualEncoder, GraphTextEncoder)> {
        let export = ExportManifest::load(&cfg.manifest)?;
        Ok((
            GraphVisualEncoder::from_export(&export)?,
            Self::from_export(&export, names, cfg)?,
        ))
    }

    fn sequence(&self, class: usize, ctx: &ContextParams) -> Result<Vec<f32>> {
        if ctx.d_token != self.d_token {
            return Err(FclError::shape("context token width", self.d_token, ctx.d_token));
        }
        let class_tokens = self.vocab.class_tokens(class)?;
        let hard: &[f64] = match ctx.mode {
            PromptMode::SoftContext => &[],
            PromptMode::HardPromptPrefix => &self.hard,
        };
        Ok(ctx
            .tokens
            .iter()
            .chain(hard)
            .chain(class_tokens)
            .map(|&v| v as f32)
            .collect())
    }
}

impl TextEncoder for GraphTextEncoder {
    fn dim(&self) -> usize {
        self.d
    }

    fn vocabulary(&self) -> &ClassVocabulary {
        &self.vocab
    }

    fn initial_context(&self, mode: PromptMode) -> ContextParams {
        let (tokens, n) = match mode {
            PromptMode::SoftContext => (self.hard.clone(), self.hard.len() / self.d_token),
            PromptMode::HardPromptPrefix => (self.prefix_init.clone(), self.prefix_init.len() / self.d_token),
        };
        ContextParams::new(n, self.d_token, mode, tokens).expect("context shape from manifest")
    }

    fn encode(&self, class: usize, ctx: &ContextParams) -> Result<Vec<f64>> {
        Ok(self.encode_all(&[class], ctx)?.remove(0))
    }

    fn encode_all(&self, classes: &[usize], ctx: &ContextParams) -> Result<Vec<Vec<f64>>> {
        if classes.is_empty() {
            return Ok(Vec::new());
        }
        let mut data = Vec::new();
        for &c in classes {
            data.extend(self.sequence(c, ctx)?);
        }
        let seq_len = data.len() / (classes.len() * self.d_token);
        run_rows(&self.plan, &[classes.len(), seq_len, self.d_token], data, self.d)
    }

    fn vjp(&self, class: usize, ctx: &ContextParams, upstream: &[f64]) -> Result<Vec<f64>> {
        finite_diff_vjp(self, class, ctx, upstream, self.fd_step)
    }
}
