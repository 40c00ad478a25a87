//! Seeded dense-map encoders with exact gradients.
//!
//! Visual: `z = normalize(W x + b)` on the flattened raw image.
//! Text:   `tau_c = normalize(A mean(tokens) + B e_c)` where `tokens` are the
//! context tokens (plus the fixed hard prompt in CL-HP mode) and `e_c` is the
//! class pseudo-embedding from the vocabulary.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ClassVocabulary, ContextParams, ImageTensor, PromptMode, TextEncoder, VisualEncoder};
use crate::error::{FclError, Result};
use crate::numerics::{dot, l2_normalize, norm, stable_hash, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyVisualConfig {
    pub height: usize,
    pub width: usize,
    pub d: usize,
    pub seed: u64,
    pub bias_scale: f64,
}

impl Default for ToyVisualConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            d: 64,
            seed: 0x7649_5f65_6e63,
            bias_scale: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyVisualEncoder {
    cfg: ToyVisualConfig,
    /// `d x (H * W * 3)`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ToyVisualEncoder {
    pub fn new(cfg: ToyVisualConfig) -> Result<Self> {
        if cfg.height == 0 || cfg.width == 0 || cfg.d == 0 {
            return Err(FclError::invalid("encoder.toy_visual", "dimensions must be positive"));
        }
        let inputs = cfg.height * cfg.width * 3;
        let mut rng = RngStream::new(cfg.seed, stable_hash(b"toy-visual"));
        let scale = 1.0 / (inputs as f64).sqrt();
        let weights = (0..cfg.d * inputs).map(|_| scale * rng.gaussian()).collect();
        let bias_scale = cfg.bias_scale / (cfg.d as f64).sqrt();
        let bias = (0..cfg.d).map(|_| bias_scale * rng.gaussian()).collect();
        Ok(Self { cfg, weights, bias })
    }

    pub fn config(&self) -> &ToyVisualConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// `W x` without bias or normalization.
    pub fn linear_response(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        self.check_input(image)?;
        let x = image.data();
        Ok(self.weights.chunks(x.len()).map(|row| dot(row, x)).collect())
    }
}

impl VisualEncoder for ToyVisualEncoder {
    fn dim(&self) -> usize {
        self.cfg.d
    }

    fn input_size(&self) -> (usize, usize) {
        (self.cfg.height, self.cfg.width)
    }

    fn encode(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let mut z = self.linear_response(image)?;
        for (v, b) in z.iter_mut().zip(&self.bias) {
            *v += b;
        }
        l2_normalize(&z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTextConfig {
    pub d: usize,
    pub d_token: usize,
    /// Width of the class pseudo-embedding `e_c`.
    pub d_class: usize,
    /// Number of learnable prefix tokens in CL-HP mode.
    pub n_prefix: usize,
    /// Scale of the context block `A` relative to the class block `B`.
    pub context_gain: f64,
    /// Standard deviation of hashed word-token embeddings.
    pub token_scale: f64,
    pub hard_prompt: String,
    pub seed: u64,
}

impl Default for ToyTextConfig {
    fn default() -> Self {
        Self {
            d: 64,
            d_token: 32,
            d_class: 64,
            n_prefix: 4,
            context_gain: 10.0,
            token_scale: 0.02,
            hard_prompt: "a photo of a".into(),
            seed: 0x7465_7874,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyTextEncoder {
    cfg: ToyTextConfig,
    vocab: ClassVocabulary,
    /// `A`: `d x d_token`, row-major.
    ctx_weights: Vec<f64>,
    /// `B`: `d x d_class`, row-major.
    class_weights: Vec<f64>,
    /// Hard-prompt word embeddings, one `d_token` row per word.
    hard_tokens: Vec<f64>,
    prefix_init: Vec<f64>,
    /// `B e_c` for every class.
    class_terms: Vec<Vec<f64>>,
}

fn word_embedding(word: &str, d_token: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, stable_hash(word.as_bytes()));
    (0..d_token).map(|_| scale * rng.gaussian()).collect()
}

impl ToyTextEncoder {
    pub fn new(cfg: ToyTextConfig, vocab: ClassVocabulary) -> Result<Self> {
        if cfg.d == 0 || cfg.d_token == 0 || cfg.d_class == 0 {
            return Err(FclError::invalid("encoder.toy_text", "dimensions must be positive"));
        }
        let mut rng = RngStream::new(cfg.seed, stable_hash(b"toy-text"));
        let a_scale = cfg.context_gain / (cfg.d_token as f64).sqrt();
        let ctx_weights = (0..cfg.d * cfg.d_token).map(|_| a_scale * rng.gaussian()).collect();
        let b_scale = 1.0 / (cfg.d_class as f64).sqrt();
        let class_weights = (0..cfg.d * cfg.d_class).map(|_| b_scale * rng.gaussian()).collect();
        let hard_tokens = cfg
            .hard_prompt
            .split_whitespace()
            .flat_map(|w| word_embedding(w, cfg.d_token, cfg.token_scale, cfg.seed))
            .collect();
        let mut prefix_rng = RngStream::new(cfg.seed, stable_hash(b"cl-hp-prefix"));
        let prefix_init = (0..cfg.n_prefix * cfg.d_token)
            .map(|_| cfg.token_scale * prefix_rng.gaussian())
            .collect();
        let mut enc = Self {
            cfg,
            vocab: vocab.clone(),
            ctx_weights,
            class_weights,
            hard_tokens,
            prefix_init,
            class_terms: Vec::new(),
        };
        enc.set_vocabulary(vocab)?;
        Ok(enc)
    }

    /// Vocabulary with hashed pseudo-embeddings sized for this encoder.
    pub fn hashed_vocabulary(cfg: &ToyTextConfig, names: Vec<String>, template: &str) -> Result<ClassVocabulary> {
        ClassVocabulary::hashed(names, template, 1, cfg.d_class)
    }

    pub fn set_vocabulary(&mut self, vocab: ClassVocabulary) -> Result<()> {
        let width = vocab.tokens_per_class() * vocab.d_token();
        if width != self.cfg.d_class {
            return Err(FclError::shape("toy class embedding", self.cfg.d_class, width));
        }
        let d_class = self.cfg.d_class;
        self.class_terms = (0..vocab.len())
            .map(|c| {
                let e = vocab.class_tokens(c).expect("class in range");
                self.class_weights.chunks(d_class).map(|row| dot(row, e)).collect()
            })
            .collect();
        self.vocab = vocab;
        Ok(())
    }

    pub fn config(&self) -> &ToyTextConfig {
        &self.cfg
    }

    pub fn context_weights(&self) -> &[f64] {
        &self.ctx_weights
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }

    pub fn hard_tokens(&self) -> &[f64] {
        &self.hard_tokens
    }

    fn all_tokens<'a>(&'a self, ctx: &'a ContextParams) -> (usize, Box<dyn Iterator<Item = &'a [f64]> + 'a>) {
        let d = self.cfg.d_token;
        let ctx_rows = ctx.tokens.chunks(d);
        match ctx.mode {
            PromptMode::SoftContext => (ctx.n_ctx, Box::new(ctx_rows)),
            PromptMode::HardPromptPrefix => {
                let n = ctx.n_ctx + self.hard_tokens.len() / d;
                (n, Box::new(ctx_rows.chain(self.hard_tokens.chunks(d))))
            }
        }
    }

    fn mean_token(&self, ctx: &ContextParams) -> Result<(usize, Vec<f64>)> {
        if ctx.d_token != self.cfg.d_token {
            return Err(FclError::shape("context token width", self.cfg.d_token, ctx.d_token));
        }
        let (n, rows) = self.all_tokens(ctx);
        let mut m = vec![0.0; self.cfg.d_token];
        for row in rows {
            for (a, b) in m.iter_mut().zip(row) {
                *a += b;
            }
        }
        if n > 0 {
            m.iter_mut().for_each(|v| *v /= n as f64);
        }
        Ok((n, m))
    }

    /// Un-normalized text feature `A m + B e_c`.
    pub fn pre_activation(&self, class: usize, ctx: &ContextParams) -> Result<Vec<f64>> {
        let term = self.class_terms.get(class).ok_or(FclError::UnknownClass(class))?;
        let (_, m) = self.mean_token(ctx)?;
        Ok(self
            .ctx_weights
            .chunks(self.cfg.d_token)
            .zip(term)
            .map(|(row, b)| dot(row, &m) + b)
            .collect())
    }

    /// Class pseudo-embedding `e` with `A m(ctx) + B e = target`.
    ///
    /// Used to plant text embeddings with known alignments at `delta_0`.
    /// Requires `d_class == d` so that `B` is square.
    pub fn class_embedding_for(&self, target: &[f64], ctx: &ContextParams) -> Result<Vec<f64>> {
        let d = self.cfg.d;
        if self.cfg.d_class != d {
            return Err(FclError::invalid(
                "encoder.toy_text.d_class",
                "planting requires d_class == d",
            ));
        }
        if target.len() != d {
            return Err(FclError::shape("planted target", d, target.len()));
        }
        let (_, m) = self.mean_token(ctx)?;
        let rhs: Vec<f64> = self
            .ctx_weights
            .chunks(self.cfg.d_token)
            .zip(target)
            .map(|(row, t)| t - dot(row, &m))
            .collect();
        let b = DMatrix::from_row_slice(d, d, &self.class_weights);
        b.lu()
            .solve(&DVector::from_vec(rhs))
            .map(|e| e.iter().copied().collect())
            .ok_or_else(|| FclError::Degenerate("singular class projection".into()))
    }
}

impl TextEncoder for ToyTextEncoder {
    fn dim(&self) -> usize {
        self.cfg.d
    }

    fn vocabulary(&self) -> &ClassVocabulary {
        &self.vocab
    }

    fn initial_context(&self, mode: PromptMode) -> ContextParams {
        let d = self.cfg.d_token;
        match mode {
            PromptMode::SoftContext => ContextParams {
                n_ctx: self.hard_tokens.len() / d,
                d_token: d,
                mode,
                tokens: self.hard_tokens.clone(),
            },
            PromptMode::HardPromptPrefix => ContextParams {
                n_ctx: self.cfg.n_prefix,
                d_token: d,
                mode,
                tokens: self.prefix_init.clone(),
            },
        }
    }

    fn encode(&self, class: usize, ctx: &ContextParams) -> Result<Vec<f64>> {
        l2_normalize(&self.pre_activation(class, ctx)?)
    }

    fn vjp(&self, class: usize, ctx: &ContextParams, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.cfg.d {
            return Err(FclError::shape("vjp upstream", self.cfg.d, upstream.len()));
        }
        let t = self.pre_activation(class, ctx)?;
        let t_norm = norm(&t);
        if t_norm == 0.0 {
            return Err(FclError::Degenerate("zero text pre-activation".into()));
        }
        let tau: Vec<f64> = t.iter().map(|v| v / t_norm).collect();
        let proj = dot(&tau, upstream);
        // d<tau, u>/dt = (u - tau <tau, u>) / |t|
        let g_t: Vec<f64> = upstream
            .iter()
            .zip(&tau)
            .map(|(u, tv)| (u - tv * proj) / t_norm)
            .collect();
        let d_token = self.cfg.d_token;
        let mut g_m = vec![0.0; d_token];
        for (row, gt) in self.ctx_weights.chunks(d_token).zip(&g_t) {
            for (gm, a) in g_m.iter_mut().zip(row) {
                *gm += a * gt;
            }
        }
        let (n_total, _) = self.mean_token(ctx)?;
        let scale = if n_total > 0 { 1.0 / n_total as f64 } else { 0.0 };
        let mut grad = Vec::with_capacity(ctx.len());
        for _ in 0..ctx.n_ctx {
            grad.extend(g_m.iter().map(|g| g * scale));
        }
        Ok(grad)
    }
}
