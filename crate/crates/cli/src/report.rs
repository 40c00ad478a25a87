//! Report documents and their serialization.

use std::path::Path;

use anyhow::Context;
use fcl_core::pipeline::{EpisodeReport, PredictionOutcome};
use serde::Serialize;

use crate::config::BackendKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skipped {
    pub image_id: String,
    pub reason: String,
}

/// The `evaluate` report. Episodes are ordered by image id and nothing
/// timing- or thread-dependent is included, so identical inputs give
/// byte-identical files.
#[derive(Debug, Serialize)]
pub struct EvaluationReport<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub backend: BackendKind,
    pub config: serde_json::Value,
    pub classes: &'a [String],
    pub episodes: &'a [EpisodeReport],
    pub skipped: &'a [Skipped],
    pub aggregate: &'a PredictionOutcome,
}

pub const TOOL: &str = "fcl";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Flat per-episode summary: id, label, zero-shot, FCL, correct, ECEC, EUEC.
pub fn summary_csv(episodes: &[EpisodeReport], classes: &[String]) -> anyhow::Result<Vec<u8>> {
    let name = |c: usize| classes.get(c).cloned().unwrap_or_else(|| c.to_string());
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image_id", "label", "zero_shot", "fcl", "correct", "ecec", "euec"])?;
    for r in episodes {
        w.write_record([
            r.image_id.clone(),
            r.label.map(name).unwrap_or_default(),
            name(r.zero_shot),
            name(r.prediction),
            r.correct().map(|c| c.to_string()).unwrap_or_default(),
            opt(r.ecec),
            opt(r.euec),
        ])?;
    }
    Ok(w.into_inner()?)
}

/// Rows under a header, as CSV bytes.
pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    Ok(w.into_inner()?)
}
