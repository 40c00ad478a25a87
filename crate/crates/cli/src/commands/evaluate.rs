use std::path::PathBuf;

use anyhow::Context;
use fcl_core::pipeline::{summarize, Episode, EpisodeReport};
use rayon::prelude::*;

use super::out_dir;
use crate::args::GlobalArgs;
use crate::backend::Backend;
use crate::config::RunConfig;
use crate::dataset::{decode_image, read_class_names, DatasetManifest, Entry};
use crate::error::{CliError, CliResult};
use crate::report::{summary_csv, to_json, write_file, EvaluationReport, Skipped, TOOL, VERSION};

enum Outcome {
    Done(Box<EpisodeReport>),
    Skipped(Skipped),
}

fn run_entry(backend: &Backend, cfg: &RunConfig, e: &Entry) -> fcl_core::Result<Outcome> {
    let image = match decode_image(&e.path) {
        Ok(img) => img,
        Err(err) => {
            log::warn!("skipping {}: {err:#}", e.id);
            return Ok(Outcome::Skipped(Skipped {
                image_id: e.id.clone(),
                reason: format!("{err:#}"),
            }));
        }
    };
    backend
        .run(
            Episode {
                id: &e.id,
                image: &image,
                label: e.label,
            },
            cfg,
        )
        .map(|r| Outcome::Done(Box::new(r)))
}

pub fn evaluate(g: &GlobalArgs, dataset: Option<PathBuf>) -> CliResult<i32> {
    let mut overrides = g.overrides();
    overrides.dataset = dataset;
    let cfg = RunConfig::load(g.config.as_deref(), &overrides)?;
    let manifest_path = cfg
        .dataset
        .clone()
        .ok_or_else(|| CliError::usage("no dataset: pass --dataset <FILE> or set `dataset` in the config"))?;
    let (manifest, base) = DatasetManifest::read(&manifest_path)?;
    let ds = manifest.load(&base)?;
    let names = match &cfg.classes {
        Some(p) => {
            let names = read_class_names(p)?;
            if names != ds.class_names {
                return Err(CliError::usage(format!(
                    "class names in {} differ from the dataset's",
                    p.display()
                )));
            }
            names
        }
        None => ds.class_names.clone(),
    };
    if ds.entries.is_empty() {
        return Err(anyhow::anyhow!("dataset {} has no images", manifest_path.display()).into());
    }
    let backend = Backend::build(&cfg, names)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads())
        .build()
        .context("starting the worker pool")?;
    let outcomes: Vec<fcl_core::Result<Outcome>> =
        pool.install(|| ds.entries.par_iter().map(|e| run_entry(&backend, &cfg, e)).collect());

    let mut episodes = Vec::with_capacity(outcomes.len());
    let mut skipped = Vec::new();
    for (entry, outcome) in ds.entries.iter().zip(outcomes) {
        match outcome.with_context(|| format!("episode {}", entry.id))? {
            Outcome::Done(r) => episodes.push(*r),
            Outcome::Skipped(s) => skipped.push(s),
        }
    }
    if episodes.is_empty() {
        return Err(anyhow::anyhow!("every image failed to decode ({} skipped)", skipped.len()).into());
    }
    let aggregate = summarize(&mut episodes, skipped.len())?;
    let report = EvaluationReport {
        tool: TOOL,
        version: VERSION,
        seed: cfg.seed,
        backend: cfg.backend.kind,
        config: cfg.echo(),
        classes: &backend.class_names,
        episodes: &episodes,
        skipped: &skipped,
        aggregate: &aggregate,
    };
    let out = out_dir(&cfg);
    write_file(&out.join("report.json"), to_json(&report).as_bytes())?;
    write_file(&out.join("summary.csv"), &summary_csv(&episodes, &backend.class_names)?)?;

    let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |a| format!("{:.2}%", 100.0 * a));
    println!(
        "evaluated {} images ({} skipped): accuracy {}, zero-shot {}; report in {}",
        aggregate.n_episodes,
        aggregate.n_skipped,
        pct(aggregate.accuracy),
        pct(aggregate.zero_shot_accuracy),
        out.display()
    );
    Ok(0)
}
