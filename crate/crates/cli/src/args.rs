use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fcl_core::encoders::PromptMode;

use crate::config::{BackendKind, Overrides};

/// Fair context learning: episodic test-time adaptation for
/// vision-language classifiers.
#[derive(Debug, Parser)]
#[command(name = "fcl", version, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PromptArg {
    /// Learnable context replaces the hard prompt.
    Cl,
    /// Hard prompt kept, learnable prefix prepended.
    ClHp,
}

impl From<PromptArg> for PromptMode {
    fn from(p: PromptArg) -> Self {
        match p {
            PromptArg::Cl => PromptMode::SoftContext,
            PromptArg::ClHp => PromptMode::HardPromptPrefix,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; missing keys take the documented defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Augmented views per image (N).
    #[arg(long, global = true)]
    pub views: Option<usize>,
    /// Retained low-entropy fraction of views.
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    /// Candidate-set size K.
    #[arg(long, global = true)]
    pub topk: Option<usize>,
    /// Occlusion masks per episode.
    #[arg(long, global = true)]
    pub masks: Option<usize>,
    /// Calibration steps.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Episodes run concurrently (FCL_NO_PARALLEL=1 forces 1).
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub prompt_mode: Option<PromptArg>,
    /// Prompt-ensemble templates, one per line with a `{}` slot.
    #[arg(long, global = true, value_name = "FILE")]
    pub templates: Option<PathBuf>,
}

impl GlobalArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            backend: self.backend,
            views: self.views,
            rho: self.rho,
            topk: self.topk,
            masks: self.masks,
            steps: self.steps,
            out: self.out.clone(),
            parallel: self.parallel,
            prompt_mode: self.prompt_mode.map(Into::into),
            templates: self.templates.clone(),
            dataset: None,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode on an image and print its report.
    Predict {
        image: PathBuf,
        /// Ground-truth class name, if known.
        #[arg(long)]
        label: Option<String>,
        /// Episode id (seeds the episode's random streams); defaults to the file name.
        #[arg(long)]
        id: Option<String>,
    },
    /// Run every image of a dataset and write report.json and summary.csv.
    Evaluate {
        /// Dataset manifest; overrides the config's `dataset`.
        #[arg(long, value_name = "FILE")]
        dataset: Option<PathBuf>,
    },
    /// Dump the class evidence maps of an image as PGM files plus a JSON sidecar.
    Evidence {
        image: PathBuf,
        #[arg(long)]
        id: Option<String>,
    },
    /// Synthetic experiments on the additive evidence model.
    #[command(subcommand)]
    TheoryLab(TheoryCommand),
    /// Run the embedded property suites; exits 1 if any fails.
    Selftest {
        /// Run only these suites (repeatable).
        #[arg(long = "suite", value_name = "NAME")]
        suites: Vec<String>,
    },
}

#[derive(Debug, Clone, Subcommand)]
pub enum TheoryCommand {
    /// Softmax lower bound on random score vectors.
    Bound {
        #[arg(long, default_value_t = 10_000)]
        instances: usize,
        #[arg(long, default_value_t = 100)]
        max_classes: usize,
    },
    /// Margin breakdown of views drawn from the biased world.
    Margin {
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Entropy minimization, voting and FCL on the 70%-biased world.
    FailureModes {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Entropy-minimization steps.
        #[arg(long, default_value_t = 5)]
        entmin_steps: usize,
    },
    /// EUEC-entropy correlation on swept, null and constant worlds.
    EuecCorr {
        #[arg(long = "n-views", default_value_t = 500)]
        n_views: usize,
    },
    /// ECEC of correct vs incorrect zero-shot predictions.
    EcecTrend {
        #[arg(long, default_value_t = 200)]
        episodes: usize,
    },
    /// Calibration loss and common-evidence gap before and after calibration.
    Calibration {
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// Proxy reconstruction from common and unique evidence embeddings.
    Proxy {
        #[arg(long, default_value_t = 200)]
        instances: usize,
    },
}
