//! Graph backend against the tiny ONNX fixture in `tests/fixtures/graph`.
//! Reference embeddings were produced by the torch modules the graphs were
//! exported from (see `make_fixture.py`).
#![cfg(feature = "graph")]

use std::path::{Path, PathBuf};

use fcl_core::encoders::{
    ExportManifest, GraphConfig, GraphTextEncoder, ImageTensor, PromptMode, TextEncoder, VisualEncoder,
};
use fcl_core::numerics::{dot, norm};
use fcl_core::pipeline::{run_episode, Encoders, Episode, EpisodeConfig};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/graph")
}

fn names() -> Vec<String> {
    std::fs::read_to_string(fixture().join("classes.txt"))
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

fn config() -> GraphConfig {
    GraphConfig {
        manifest: fixture().join("manifest.json"),
        ..Default::default()
    }
}

fn pattern_image() -> ImageTensor {
    let n = 16;
    let mut data = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            for c in 0..3 {
                data.push(((y * 7 + x * 3 + c * 5) % 17) as f64 / 16.0);
            }
        }
    }
    ImageTensor::new(n, n, data).unwrap()
}

fn expected() -> (Vec<f64>, Vec<Vec<f64>>) {
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture().join("expected.json")).unwrap()).unwrap();
    let row = |r: &serde_json::Value| {
        r.as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect::<Vec<_>>()
    };
    (
        row(&v["image_embedding"]),
        v["text_embeddings"].as_array().unwrap().iter().map(row).collect(),
    )
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn matches_source_model_embeddings() {
    let (visual, text) = GraphTextEncoder::load_pair(&config(), names()).unwrap();
    let (z_ref, tau_ref) = expected();
    let z = visual.encode(&pattern_image()).unwrap();
    assert!(max_abs_diff(&z, &z_ref) < 1e-5, "{z:?} vs {z_ref:?}");
    assert!(dot(&z, &z_ref) > 0.9999);
    let ctx = text.initial_context(PromptMode::SoftContext);
    assert_eq!((ctx.n_ctx, ctx.d_token), (4, 6));
    let tau = text.encode_all(&[0, 1, 2], &ctx).unwrap();
    for (t, r) in tau.iter().zip(&tau_ref) {
        assert!(max_abs_diff(t, r) < 1e-5, "{t:?} vs {r:?}");
    }
    // Batched and single-class forwards agree.
    assert_eq!(text.encode(1, &ctx).unwrap(), tau[1]);
}

#[test]
fn batch_forward_equals_single_forwards() {
    let (visual, _) = GraphTextEncoder::load_pair(&config(), names()).unwrap();
    let a = pattern_image();
    let b = ImageTensor::filled(16, 16, [0.2, 0.5, 0.9]).unwrap();
    let batch = visual.encode_batch(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(batch[0], visual.encode(&a).unwrap());
    assert_eq!(batch[1], visual.encode(&b).unwrap());
    for z in &batch {
        assert!((norm(z) - 1.0).abs() < 1e-6);
    }
    let wrong = ImageTensor::filled(8, 8, [0.0; 3]).unwrap();
    assert!(visual.encode(&wrong).is_err());
}

#[test]
fn hard_prompt_prefix_mode_runs_with_longer_sequences() {
    let (_, text) = GraphTextEncoder::load_pair(&config(), names()).unwrap();
    let ctx = text.initial_context(PromptMode::HardPromptPrefix);
    assert_eq!(ctx.n_ctx, 4);
    let tau = text.encode_all(&[0, 1, 2], &ctx).unwrap();
    let soft = text
        .encode_all(&[0, 1, 2], &text.initial_context(PromptMode::SoftContext))
        .unwrap();
    for (a, b) in tau.iter().zip(&soft) {
        assert!((norm(a) - 1.0).abs() < 1e-6);
        assert_ne!(a, b);
    }
}

#[test]
fn finite_difference_gradient_is_a_descent_direction() {
    let (_, text) = GraphTextEncoder::load_pair(&config(), names()).unwrap();
    let ctx = text.initial_context(PromptMode::SoftContext);
    let upstream: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
    let g = text.vjp(2, &ctx, &upstream).unwrap();
    let gn = norm(&g);
    assert!(gn > 0.0);
    let f = |c: &fcl_core::encoders::ContextParams| dot(&text.encode(2, c).unwrap(), &upstream);
    let step = 0.05 / gn;
    let mut up = ctx.clone();
    up.tokens.iter_mut().zip(&g).for_each(|(t, gi)| *t += step * gi);
    let gain = f(&up) - f(&ctx);
    // First-order prediction of the gain, within 20%.
    let predicted = step * gn * gn;
    assert!(
        gain > 0.0 && (gain - predicted).abs() < 0.2 * predicted,
        "{gain} vs {predicted}"
    );
}

#[test]
fn full_episode_runs_on_graph_backend() {
    let (visual, text) = GraphTextEncoder::load_pair(&config(), names()).unwrap();
    let mut cfg = EpisodeConfig::default();
    cfg.encoder.d = 8;
    cfg.augment.n_views = 8;
    cfg.evidence.n_masks = 12;
    cfg.evidence.grid_sizes = vec![2, 4];
    cfg.explore.top_k = 3;
    let image = pattern_image();
    let report = run_episode(
        Episode {
            id: "pattern",
            image: &image,
            label: Some(0),
        },
        &cfg,
        Encoders {
            visual: &visual,
            text: &text,
        },
        7,
    )
    .unwrap();
    assert!(report.degraded.is_none(), "{:?}", report.degraded);
    assert!(report.exploration.classes.contains(&report.prediction));
    assert!(!report.calibration.skipped && !report.calibration.fell_back);
    assert!(report.calibration.l_cal.iter().all(|l| l.is_finite()));
}

#[test]
fn tampered_export_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    for f in [
        "manifest.json",
        "vision.onnx",
        "text.onnx",
        "classes.fcle",
        "context.fcle",
    ] {
        std::fs::copy(fixture().join(f), dir.path().join(f)).unwrap();
    }
    let manifest = dir.path().join("manifest.json");
    assert!(ExportManifest::load(&manifest).is_ok());
    let mut bytes = std::fs::read(dir.path().join("classes.fcle")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(dir.path().join("classes.fcle"), bytes).unwrap();
    let cfg = GraphConfig {
        manifest,
        ..Default::default()
    };
    assert!(GraphTextEncoder::load_pair(&cfg, names()).is_err());
}
