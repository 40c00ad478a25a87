//! Builds the encoders a run asks for.

use fcl_core::encoders::{
    GraphTextEncoder, TextEncoder, ToyTextEncoder, ToyVisualEncoder, VisualEncoder, DEFAULT_TEMPLATE,
};
use fcl_core::pipeline::{prompt_ensemble_predict, run_episode, Encoders, Episode, EpisodeReport};

use crate::config::{BackendKind, RunConfig};
use crate::error::CliResult;

pub struct Backend {
    pub visual: Box<dyn VisualEncoder>,
    /// One text encoder per ensemble template, or a single one.
    pub texts: Vec<Box<dyn TextEncoder>>,
    pub class_names: Vec<String>,
}

impl Backend {
    pub fn build(cfg: &RunConfig, class_names: Vec<String>) -> CliResult<Self> {
        let (visual, texts): (Box<dyn VisualEncoder>, Vec<Box<dyn TextEncoder>>) = match cfg.backend.kind {
            BackendKind::Toy => {
                let toy = &cfg.backend.toy;
                let templates = cfg
                    .episode
                    .ensemble_templates
                    .clone()
                    .unwrap_or_else(|| vec![DEFAULT_TEMPLATE.to_string()]);
                let mut texts: Vec<Box<dyn TextEncoder>> = Vec::with_capacity(templates.len());
                for t in &templates {
                    let vocab = ToyTextEncoder::hashed_vocabulary(&toy.text, class_names.clone(), t)?;
                    texts.push(Box::new(ToyTextEncoder::new(toy.text.clone(), vocab)?));
                }
                (Box::new(ToyVisualEncoder::new(toy.visual)?), texts)
            }
            BackendKind::Graph => {
                let (v, t) = GraphTextEncoder::load_pair(&cfg.backend.graph, class_names.clone())?;
                (Box::new(v), vec![Box::new(t)])
            }
        };
        Ok(Self {
            visual,
            texts,
            class_names,
        })
    }

    pub fn text(&self) -> &dyn TextEncoder {
        self.texts[0].as_ref()
    }

    pub fn encoders(&self) -> Encoders<'_> {
        Encoders {
            visual: self.visual.as_ref(),
            text: self.text(),
        }
    }

    /// One episode, through the prompt ensemble when templates are configured.
    pub fn run(&self, episode: Episode<'_>, cfg: &RunConfig) -> fcl_core::Result<EpisodeReport> {
        if cfg.episode.ensemble_templates.is_some() {
            let texts: Vec<&dyn TextEncoder> = self.texts.iter().map(|t| t.as_ref()).collect();
            prompt_ensemble_predict(episode, &cfg.episode, self.visual.as_ref(), &texts, cfg.seed)
        } else {
            run_episode(episode, &cfg.episode, self.encoders(), cfg.seed)
        }
    }

    pub fn name(&self, class: usize) -> &str {
        self.class_names.get(class).map_or("?", String::as_str)
    }
}
