use std::path::Path;
use std::time::Instant;

use fcl_core::pipeline::Episode;
use serde_json::json;

use super::{class_names, episode_id, require_config};
use crate::args::GlobalArgs;
use crate::backend::Backend;
use crate::config::RunConfig;
use crate::dataset::decode_image;
use crate::error::{CliError, CliResult};
use crate::report::{to_json, write_file, TOOL, VERSION};

pub fn predict(g: &GlobalArgs, image: &Path, label: Option<&str>, id: Option<String>) -> CliResult<i32> {
    require_config(g.config.as_deref(), "predict")?;
    let cfg = RunConfig::load(g.config.as_deref(), &g.overrides())?;
    let names = class_names(&cfg)?;
    let label = label
        .map(|l| {
            names
                .iter()
                .position(|n| n == l)
                .ok_or_else(|| CliError::usage(format!("--label `{l}` is not one of the configured classes")))
        })
        .transpose()?;
    let backend = Backend::build(&cfg, names)?;
    let img = decode_image(image)?;
    let id = episode_id(image, id);

    let start = Instant::now();
    let mut report = backend.run(
        Episode {
            id: &id,
            image: &img,
            label,
        },
        &cfg,
    )?;
    report.wall_time_ms = Some(start.elapsed().as_secs_f64() * 1e3);

    let doc = json!({
        "tool": TOOL,
        "version": VERSION,
        "seed": cfg.seed,
        "backend": cfg.backend.kind,
        "config": cfg.echo(),
        "prediction_name": backend.name(report.prediction),
        "zero_shot_name": backend.name(report.zero_shot),
        "episode": report,
    });
    let text = to_json(&doc);
    if let Some(out) = &cfg.out {
        let safe = id.replace(['/', '\\'], "_");
        write_file(&out.join(format!("predict-{safe}.json")), text.as_bytes())?;
    }
    print!("{text}");
    Ok(0)
}
