//! Command-line front end: configuration, dataset ingestion, command
//! dispatch and report emission.

pub mod args;
pub mod backend;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;

pub use args::Cli;
pub use error::{CliError, CliResult};

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> CliResult<i32> {
    use args::Command;
    let g = &cli.global;
    match cli.command {
        Command::Predict { image, label, id } => commands::predict(g, &image, label.as_deref(), id),
        Command::Evaluate { dataset } => commands::evaluate(g, dataset),
        Command::Evidence { image, id } => commands::evidence(g, &image, id),
        Command::TheoryLab(t) => commands::theory_lab(g, &t),
        Command::Selftest { suites } => commands::selftest(g, &suites),
    }
}
