//! Evidence-map dump: the exploration and localization stages of an
//! episode, with the maps written as 8-bit PGM images.

use std::path::Path;

use fcl_core::augment::generate_views;
use fcl_core::evidence::localize;
use fcl_core::explore::{explore_topk, ExploreConfig, ScoreMatrix};
use fcl_core::pipeline::episode_rng;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::ImageEncoder;
use serde::Serialize;

use super::{class_names, episode_id, out_dir, require_config};
use crate::args::GlobalArgs;
use crate::backend::Backend;
use crate::config::RunConfig;
use crate::dataset::decode_image;
use crate::error::CliResult;
use crate::report::{to_json, write_file};

#[derive(Debug, Serialize)]
struct MapStats {
    file: String,
    min: f64,
    max: f64,
    mean: f64,
}

#[derive(Debug, Serialize)]
struct ClassMap {
    class: usize,
    name: String,
    vote_fraction: f64,
    #[serde(flatten)]
    stats: MapStats,
}

#[derive(Debug, Serialize)]
struct PairMap {
    pair: (usize, usize),
    names: (String, String),
    #[serde(flatten)]
    stats: MapStats,
}

#[derive(Debug, Serialize)]
struct Sidecar {
    image_id: String,
    height: usize,
    width: usize,
    zero_shot: usize,
    candidates: Vec<usize>,
    class_maps: Vec<ClassMap>,
    common_maps: Vec<PairMap>,
}

/// Min-max scales `values` to 0..=255 (a constant map becomes mid-grey).
fn to_gray(values: &[f64]) -> (Vec<u8>, f64, f64) {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let span = hi - lo;
    let px = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (255.0 * (v - lo) / span).round() as u8
            } else {
                128
            }
        })
        .collect();
    (px, lo, hi)
}

fn write_pgm(dir: &Path, file: &str, height: usize, width: usize, values: &[f64]) -> anyhow::Result<MapStats> {
    let (px, min, max) = to_gray(values);
    let mut bytes = Vec::new();
    PnmEncoder::new(&mut bytes)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&px, width as u32, height as u32, image::ExtendedColorType::L8)?;
    write_file(&dir.join(file), &bytes)?;
    Ok(MapStats {
        file: file.to_string(),
        min,
        max,
        mean: values.iter().sum::<f64>() / values.len() as f64,
    })
}

pub fn evidence(g: &GlobalArgs, image: &Path, id: Option<String>) -> CliResult<i32> {
    require_config(g.config.as_deref(), "evidence")?;
    let cfg = RunConfig::load(g.config.as_deref(), &g.overrides())?;
    let backend = Backend::build(&cfg, class_names(&cfg)?)?;
    let img = decode_image(image)?;
    let id = episode_id(image, id);
    let ep = &cfg.episode;
    let (visual, text) = (backend.visual.as_ref(), backend.text());

    // Same streams and stages as the episode runner, so the maps are the
    // ones calibration would see.
    let views = generate_views(
        &img,
        &ep.augment,
        visual.input_size(),
        &mut episode_rng(cfg.seed, &id, "views"),
    )?;
    let z = visual.encode_batch(&views.views)?;
    let ctx0 = text.initial_context(ep.prompt_mode);
    let all: Vec<usize> = (0..text.num_classes()).collect();
    let tau0 = text.encode_all(&all, &ctx0)?;
    let scores = ScoreMatrix::compute(&z, &tau0, &all, ep.encoder.beta)?;
    let zero_shot = fcl_core::numerics::argmax(scores.row(0));
    let cands = explore_topk(
        &scores,
        &ExploreConfig {
            top_k: ep.explore.top_k.min(all.len()),
            ..ep.explore
        },
    )?;
    let ck = &cands.classes;
    let tau_ck: Vec<Vec<f64>> = ck.iter().map(|&c| tau0[c].clone()).collect();
    let original = &views.views[0];
    let ev = localize(
        visual,
        original,
        ck,
        &tau_ck,
        ep.encoder.beta,
        &ep.evidence,
        &mut episode_rng(cfg.seed, &id, "masks"),
    )?;

    let dir = out_dir(&cfg).join("evidence").join(id.replace(['/', '\\'], "_"));
    let (h, w) = (original.height(), original.width());
    let mut class_maps = Vec::with_capacity(ck.len());
    for (k, (&c, e)) in ck.iter().zip(&ev.evidence).enumerate() {
        class_maps.push(ClassMap {
            class: c,
            name: backend.name(c).to_string(),
            vote_fraction: cands.vote_fractions[k],
            stats: write_pgm(&dir, &format!("E-{c}.pgm"), e.height, e.width, &e.values)?,
        });
    }
    let top = cands.top();
    let mut common_maps = Vec::new();
    for &other in ck.iter().filter(|&&c| c != top) {
        let q = ev.common(top, other)?;
        common_maps.push(PairMap {
            pair: (top, other),
            names: (backend.name(top).to_string(), backend.name(other).to_string()),
            stats: write_pgm(&dir, &format!("Q-{top}-{other}.pgm"), q.height, q.width, &q.values)?,
        });
    }
    let sidecar = Sidecar {
        image_id: id,
        height: h,
        width: w,
        zero_shot,
        candidates: ck.clone(),
        class_maps,
        common_maps,
    };
    write_file(&dir.join("evidence.json"), to_json(&sidecar).as_bytes())?;
    println!(
        "wrote {} evidence maps to {}",
        sidecar.class_maps.len() + sidecar.common_maps.len(),
        dir.display()
    );
    Ok(0)
}
