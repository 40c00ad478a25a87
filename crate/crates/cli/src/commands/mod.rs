mod evaluate;
mod evidence;
mod predict;
mod selftest;
mod theory;

pub use evaluate::evaluate;
pub use evidence::evidence;
pub use predict::predict;
pub use selftest::selftest;
pub use theory::theory_lab;

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::dataset::{read_class_names, DatasetManifest};
use crate::error::{CliError, CliResult};

/// Class names from the config's `classes` file, else from its dataset manifest.
fn class_names(cfg: &RunConfig) -> CliResult<Vec<String>> {
    if let Some(p) = &cfg.classes {
        return read_class_names(p);
    }
    if let Some(p) = &cfg.dataset {
        let (manifest, base) = DatasetManifest::read(p)?;
        return read_class_names(&base.join(&manifest.class_names));
    }
    Err(CliError::usage(
        "no class names: set `classes` or `dataset` in the config",
    ))
}

fn require_config(config: Option<&Path>, command: &str) -> CliResult<()> {
    if config.is_none() {
        return Err(CliError::usage(format!(
            "`{command}` needs --config <FILE> (the class names come from it)"
        )));
    }
    Ok(())
}

fn episode_id(image: &Path, id: Option<String>) -> String {
    id.unwrap_or_else(|| {
        image
            .file_name()
            .map_or_else(|| image.display().to_string(), |n| n.to_string_lossy().into_owned())
    })
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("fcl-out"))
}
