use criterion::{criterion_group, criterion_main, Criterion};
use fcl_bench::{test_image, toy_backend, N_CLASSES};
use fcl_core::augment::generate_views;
use fcl_core::calibrate::{calibrate_context, PairSet};
use fcl_core::encoders::{TextEncoder, VisualEncoder};
use fcl_core::evidence::{common_evidence_embedding, localize};
use fcl_core::explore::{explore_topk, ScoreMatrix};
use fcl_core::pipeline::{episode_rng, run_episode, Encoders, Episode, EpisodeConfig};
use std::hint::black_box;

fn stages(c: &mut Criterion) {
    let (visual, text) = toy_backend();
    let cfg = EpisodeConfig::default();
    let beta = cfg.encoder.beta;
    let image = test_image();
    let views = generate_views(
        &image,
        &cfg.augment,
        visual.input_size(),
        &mut episode_rng(1, "bench", "views"),
    )
    .unwrap();
    let z = visual.encode_batch(&views.views).unwrap();
    let ctx0 = text.initial_context(cfg.prompt_mode);
    let all: Vec<usize> = (0..N_CLASSES).collect();
    let tau0 = text.encode_all(&all, &ctx0).unwrap();
    let scores = ScoreMatrix::compute(&z, &tau0, &all, beta).unwrap();
    let cands = explore_topk(&scores, &cfg.explore).unwrap();
    let ck = cands.classes.clone();
    let tau_ck: Vec<Vec<f64>> = ck.iter().map(|&k| tau0[k].clone()).collect();

    c.bench_function("augment/64-views", |b| {
        b.iter(|| {
            generate_views(
                black_box(&image),
                &cfg.augment,
                visual.input_size(),
                &mut episode_rng(1, "bench", "views"),
            )
            .unwrap()
        })
    });
    c.bench_function("explore/topk-64x100", |b| {
        b.iter(|| explore_topk(black_box(&scores), &cfg.explore).unwrap())
    });

    let mut light = cfg.evidence.clone();
    light.n_masks = 100;
    c.bench_function("evidence/localize-k10-100-masks", |b| {
        b.iter(|| {
            localize(
                &visual,
                &views.views[0],
                &ck,
                &tau_ck,
                beta,
                &light,
                &mut episode_rng(1, "bench", "masks"),
            )
            .unwrap()
        })
    });

    let ev = localize(
        &visual,
        &views.views[0],
        &ck,
        &tau_ck,
        beta,
        &light,
        &mut episode_rng(1, "bench", "masks"),
    )
    .unwrap();
    let commons = PairSet::pair_positions(ck.len())
        .into_iter()
        .map(|(a, b)| common_evidence_embedding(&visual, &views.views[0], &ev.common(ck[a], ck[b]).unwrap()).unwrap())
        .collect();
    let pairs = PairSet::new(ck.clone(), commons, z[0].clone()).unwrap();
    c.bench_function("calibrate/k10-2-steps", |b| {
        b.iter(|| calibrate_context(&text, black_box(&ctx0), &pairs, beta, &cfg.calib).unwrap())
    });

    let mut group = c.benchmark_group("episode");
    group.sample_size(10);
    group.bench_function("toy-defaults", |b| {
        b.iter(|| {
            run_episode(
                Episode {
                    id: "bench",
                    image: &image,
                    label: Some(3),
                },
                &cfg,
                Encoders {
                    visual: &visual,
                    text: &text,
                },
                1,
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
