//! Run configuration: one JSON document, fully defaulted, with CLI flags
//! applied on top.
//!
//! Relative paths inside a config file resolve against the file's directory;
//! paths given as flags resolve against the working directory. After loading,
//! every path is absolute, so the echoed config replays the run from anywhere.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use fcl_core::encoders::{GraphConfig, PromptMode, ToyTextConfig, ToyVisualConfig};
use fcl_core::pipeline::EpisodeConfig;
use fcl_core::FclError;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Toy,
    Graph,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyBackend {
    pub visual: ToyVisualConfig,
    pub text: ToyTextConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub toy: ToyBackend,
    pub graph: GraphConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub backend: BackendConfig,
    /// Dataset manifest (used by `evaluate`).
    pub dataset: Option<PathBuf>,
    /// Class-names file; defaults to the dataset manifest's.
    pub classes: Option<PathBuf>,
    pub episode: EpisodeConfig,
    /// Output directory. Not echoed: it does not affect results.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    /// Concurrent episodes. Not echoed, for the same reason.
    #[serde(skip_serializing)]
    pub parallel: Option<usize>,
}

/// Flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub views: Option<usize>,
    pub rho: Option<f64>,
    pub topk: Option<usize>,
    pub masks: Option<usize>,
    pub steps: Option<usize>,
    pub out: Option<PathBuf>,
    pub parallel: Option<usize>,
    pub prompt_mode: Option<PromptMode>,
    pub templates: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn cwd() -> PathBuf {
    std::env::current_dir().unwrap_or_else(|_| PathBuf::from("."))
}

/// Template file: one template per line, each with a `{}` class slot.
pub fn read_templates(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read templates {}: {e}", path.display())))?;
    let templates: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect();
    if templates.is_empty() {
        return Err(CliError::usage(format!("{}: no templates", path.display())));
    }
    if let Some(bad) = templates.iter().find(|t| !t.contains("{}")) {
        return Err(CliError::usage(format!("template `{bad}` has no `{{}}` class slot")));
    }
    Ok(templates)
}

impl RunConfig {
    /// Parses a config document, reporting schema errors with the path to
    /// the offending field.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                CliError::usage(format!("config: {inner}"))
            } else {
                CliError::usage(format!("config field `{path}`: {inner}"))
            }
        })
    }

    /// Reads `path` (or starts from defaults), applies `overrides`, resolves
    /// paths and validates.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
                let mut cfg = Self::from_json(&text)?;
                let base = absolute(&cwd(), p.parent().unwrap_or(Path::new("")));
                cfg.resolve_paths(&base);
                cfg
            }
            None => Self::default(),
        };
        cfg.apply(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.dataset, &mut self.classes, &mut self.out]
            .into_iter()
            .flatten()
        {
            *p = absolute(base, p);
        }
        self.backend.graph.manifest = absolute(base, &self.backend.graph.manifest);
    }

    pub fn apply(&mut self, o: &Overrides) -> CliResult<()> {
        let here = cwd();
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.backend {
            self.backend.kind = v;
        }
        let ep = &mut self.episode;
        if let Some(v) = o.views {
            ep.augment.n_views = v;
        }
        if let Some(v) = o.rho {
            ep.explore.rho = v;
        }
        if let Some(v) = o.topk {
            ep.explore.top_k = v;
        }
        if let Some(v) = o.masks {
            ep.evidence.n_masks = v;
        }
        if let Some(v) = o.steps {
            ep.calib.steps = v;
        }
        if let Some(v) = o.prompt_mode {
            ep.prompt_mode = v;
        }
        if let Some(p) = &o.templates {
            ep.ensemble_templates = Some(read_templates(&absolute(&here, p))?);
        }
        if let Some(p) = &o.out {
            self.out = Some(absolute(&here, p));
        }
        if let Some(p) = &o.dataset {
            self.dataset = Some(absolute(&here, p));
        }
        if let Some(v) = o.parallel {
            self.parallel = Some(v);
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |e: FclError| CliError::usage(e.to_string());
        self.episode.validate().map_err(usage)?;
        if self.parallel == Some(0) {
            return Err(CliError::usage("invalid configuration `parallel`: must be >= 1"));
        }
        match self.backend.kind {
            BackendKind::Toy => {
                let d = self.episode.encoder.d;
                for (field, got) in [
                    ("backend.toy.visual.d", self.backend.toy.visual.d),
                    ("backend.toy.text.d", self.backend.toy.text.d),
                ] {
                    if got != d {
                        return Err(CliError::usage(format!(
                            "invalid configuration `{field}`: {got} differs from episode.encoder.d = {d}"
                        )));
                    }
                }
            }
            BackendKind::Graph => {
                self.backend.graph.validate().map_err(usage)?;
                if self.episode.ensemble_templates.is_some() {
                    return Err(CliError::usage(
                        "the prompt ensemble needs per-template class tables; it is available on the toy backend only",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Worker threads for `evaluate`; `FCL_NO_PARALLEL=1` forces one.
    pub fn threads(&self) -> usize {
        if std::env::var("FCL_NO_PARALLEL").is_ok_and(|v| v == "1") {
            1
        } else {
            self.parallel.unwrap_or(1)
        }
    }

    /// JSON echo embedded in reports; feeding it back reproduces the run.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_defaults_match_the_code() {
        let doc = include_str!("../../../docs/config.md");
        let start = doc.find("```json\n").expect("json block") + 8;
        let end = start + doc[start..].find("```").expect("closing fence");
        let documented: serde_json::Value = serde_json::from_str(&doc[start..end]).unwrap();
        assert_eq!(documented, RunConfig::default().echo());
        // And the documented block is itself a valid config.
        assert_eq!(RunConfig::from_json(&doc[start..end]).unwrap(), RunConfig::default());
    }

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let ep = &cfg.episode;
        assert_eq!(ep.augment.n_views, 64);
        assert_eq!(ep.encoder.beta, 20.0);
        assert_eq!(ep.explore.rho, 0.3);
        assert_eq!(ep.explore.top_k, 10);
        assert_eq!(ep.evidence.n_masks, 400);
        assert_eq!(ep.evidence.grid_sizes, vec![7, 9, 11, 13]);
        assert_eq!(ep.calib.steps, 2);
        assert_eq!(ep.calib.learning_rate, 0.002);
        assert_eq!((ep.calib.lambda_cal, ep.calib.lambda_align), (1.0, 1.0));
        assert_eq!(cfg.backend.toy.text.hard_prompt.split_whitespace().count(), 4);
    }

    #[test]
    fn single_override_leaves_the_rest_default() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            masks: Some(200),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.episode.evidence.n_masks, 200);
        let mut expected = RunConfig::default();
        expected.episode.evidence.n_masks = 200;
        assert_eq!(cfg, expected);
    }

    #[test]
    fn invalid_rho_names_field_and_bound() {
        let cfg = RunConfig::from_json(r#"{"episode": {"explore": {"rho": 1.5}}}"#).unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("explore.rho") && msg.contains("(0, 1]"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let err = RunConfig::from_json(r#"{"episode": {"evidence": {"n_maks": 3}}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("episode.evidence") && msg.contains("n_maks"), "{msg}");
        let err = RunConfig::from_json(r#"{"seed": "x"}"#).unwrap_err();
        assert!(err.to_string().contains("`seed`"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.seed = 9;
        cfg.dataset = Some(PathBuf::from("/data/manifest.json"));
        cfg.out = Some(PathBuf::from("/tmp/out"));
        cfg.parallel = Some(8);
        let back = RunConfig::from_json(&cfg.echo().to_string()).unwrap();
        assert_eq!(back.seed, 9);
        assert_eq!(back.dataset, cfg.dataset);
        assert_eq!((back.out, back.parallel), (None, None));
        assert_eq!(back.episode, cfg.episode);
    }

    #[test]
    fn toy_width_must_match_encoder_width() {
        let cfg = RunConfig::from_json(r#"{"episode": {"encoder": {"beta": 20.0, "d": 32}}}"#).unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("backend.toy.visual.d"), "{msg}");
    }

    #[test]
    fn relative_paths_resolve_against_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"dataset": "data/manifest.json"}"#).unwrap();
        let cfg = RunConfig::load(Some(&path), &Overrides::default()).unwrap();
        assert_eq!(cfg.dataset.unwrap(), dir.path().join("data/manifest.json"));
    }

    #[test]
    fn templates_file_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("t.txt");
        std::fs::write(&good, "a photo of a {}.\n\n# comment\nart of the {}.\n").unwrap();
        assert_eq!(read_templates(&good).unwrap().len(), 2);
        let bad = dir.path().join("b.txt");
        std::fs::write(&bad, "no slot here\n").unwrap();
        assert_eq!(read_templates(&bad).unwrap_err().exit_code(), 2);
    }
}
