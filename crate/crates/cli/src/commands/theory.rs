//! Theory-lab subcommands. Each writes `theory-<name>.json` and a flat
//! `theory-<name>.csv` under `--out`, or prints the JSON when no output
//! directory is given.

use fcl_core::encoders::TextEncoder;
use fcl_core::theorylab::experiments::{
    calibration_efficacy, check_softmax_bound, ecec_trend, euec_entropy_correlation, run_failure_mode_experiments,
    sample_biased_episode, BiasedWorldConfig, EuecSweep,
};
use fcl_core::theorylab::proxy::{proxy_reconstruction, ProxyConfig};
use fcl_core::theorylab::{margin_breakdown, SyntheticWorld, WorldSpec};
use fcl_core::FclError;
use serde_json::{json, Value};

use crate::args::{GlobalArgs, TheoryCommand};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::report::{table_csv, to_json, write_file};

struct Output {
    name: &'static str,
    json: Value,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

fn s(v: impl ToString) -> String {
    v.to_string()
}

pub fn theory_lab(g: &GlobalArgs, cmd: &TheoryCommand) -> CliResult<i32> {
    let cfg = RunConfig::load(g.config.as_deref(), &g.overrides())?;
    let seed = cfg.seed;
    let (explore, calib) = (&cfg.episode.explore, &cfg.episode.calib);
    let out = match *cmd {
        TheoryCommand::Bound { instances, max_classes } => {
            let r = check_softmax_bound(instances, max_classes, seed)?;
            Output {
                name: "bound",
                json: serde_json::to_value(r).expect("serializable"),
                header: vec![
                    "instances",
                    "violations",
                    "non_strict",
                    "max_two_class_error",
                    "max_tied_error",
                ],
                rows: vec![vec![
                    s(r.instances),
                    s(r.violations),
                    s(r.non_strict),
                    s(r.max_two_class_error),
                    s(r.max_tied_error),
                ]],
            }
        }
        TheoryCommand::Margin { trial } => {
            let world_cfg = BiasedWorldConfig::default();
            let world = SyntheticWorld::new(world_cfg.world.clone())?;
            let text = world.planted_text_encoder(world_cfg.text.clone(), world_cfg.prompt_mode)?;
            let all: Vec<usize> = (0..world.n_classes()).collect();
            let tau0 = text.encode_all(&all, &text.initial_context(world_cfg.prompt_mode))?;
            let episode = sample_biased_episode(&world, &world_cfg, seed, trial)?;
            let mut views = Vec::with_capacity(episode.views.len());
            let mut rows = Vec::with_capacity(episode.views.len());
            for (i, (view, &biased)) in episode.views.iter().zip(&episode.biased).enumerate() {
                let b = margin_breakdown(&world, &tau0, view, world_cfg.true_class, world_cfg.beta)?;
                rows.push(vec![
                    s(i),
                    s(biased),
                    s(b.unique),
                    s(b.nearest),
                    s(b.margin),
                    s(b.recombined_margin),
                    s(b.reconstruction_error),
                ]);
                views.push(json!({ "view": i, "biased": biased, "breakdown": b }));
            }
            Output {
                name: "margin",
                json: json!({ "trial": trial, "true_class": world_cfg.true_class, "views": views }),
                header: vec![
                    "view",
                    "biased",
                    "unique",
                    "nearest",
                    "margin",
                    "recombined_margin",
                    "reconstruction_error",
                ],
                rows,
            }
        }
        TheoryCommand::FailureModes { trials, entmin_steps } => {
            let biased = run_failure_mode_experiments(
                &BiasedWorldConfig::default(),
                explore,
                calib,
                entmin_steps,
                trials,
                seed,
            )?;
            let control = run_failure_mode_experiments(
                &BiasedWorldConfig::unbiased_control(),
                explore,
                calib,
                entmin_steps,
                trials,
                seed,
            )?;
            let mut rows = Vec::new();
            for (world, r) in [("biased", &biased), ("control", &control)] {
                for t in &r.trials {
                    rows.push(vec![
                        s(world),
                        s(t.trial),
                        s(t.vote_prediction),
                        s(t.entmin_amplified),
                        s(t.fcl_prediction),
                        s(t.oracle_prediction),
                        s(t.l_cal.0),
                        s(t.l_cal.1),
                        s(t.biased_pair_gap.0),
                        s(t.biased_pair_gap.1),
                    ]);
                }
            }
            Output {
                name: "failure-modes",
                json: json!({ "biased": biased, "control": control }),
                header: vec![
                    "world",
                    "trial",
                    "vote",
                    "entmin_amplified",
                    "fcl",
                    "oracle",
                    "l_cal_before",
                    "l_cal_after",
                    "pair_gap_before",
                    "pair_gap_after",
                ],
                rows,
            }
        }
        TheoryCommand::EuecCorr { n_views } => {
            let spec = WorldSpec {
                noise: 0.1,
                seed,
                ..Default::default()
            };
            let beta = cfg.episode.encoder.beta;
            let mut json = serde_json::Map::new();
            let mut rows = Vec::new();
            for (name, sweep) in [
                ("swept", EuecSweep::Swept),
                ("null", EuecSweep::Null),
                ("constant", EuecSweep::Constant),
            ] {
                // The constant world has no variance to correlate; that is
                // its expected outcome, so it is recorded rather than raised.
                match euec_entropy_correlation(&spec, sweep, n_views, beta, seed) {
                    Ok(r) => {
                        rows.push(vec![s(name), s(r.n_views), s(r.pearson), s(r.spearman)]);
                        json.insert(name.to_string(), serde_json::to_value(r).expect("serializable"));
                    }
                    Err(FclError::Degenerate(why)) => {
                        rows.push(vec![s(name), s(n_views), String::new(), String::new()]);
                        json.insert(name.to_string(), json!({ "degenerate": why }));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            Output {
                name: "euec-corr",
                json: Value::Object(json),
                header: vec!["world", "n_views", "pearson", "spearman"],
                rows,
            }
        }
        TheoryCommand::EcecTrend { episodes } => {
            let r = ecec_trend(&BiasedWorldConfig::default(), (0.0, 0.6), 1e-6, episodes, seed)?;
            let rows = r
                .rows
                .iter()
                .map(|e| {
                    vec![
                        s(e.trial),
                        s(e.label),
                        s(e.prediction),
                        s(e.label == e.prediction),
                        s(e.ecec),
                    ]
                })
                .collect();
            Output {
                name: "ecec-trend",
                json: serde_json::to_value(&r).expect("serializable"),
                header: vec!["trial", "label", "prediction", "correct", "ecec"],
                rows,
            }
        }
        TheoryCommand::Calibration { episodes } => {
            let r = calibration_efficacy(
                &BiasedWorldConfig::default(),
                explore,
                calib,
                (0.1, 0.2),
                episodes,
                seed,
            )?;
            let rows = r
                .l_cal
                .iter()
                .zip(&r.pair_gap)
                .enumerate()
                .map(|(i, (l, g))| vec![s(i), s(l.0), s(l.1), s(g.0), s(g.1)])
                .collect();
            Output {
                name: "calibration",
                json: serde_json::to_value(&r).expect("serializable"),
                header: vec![
                    "episode",
                    "l_cal_before",
                    "l_cal_after",
                    "pair_gap_before",
                    "pair_gap_after",
                ],
                rows,
            }
        }
        TheoryCommand::Proxy { instances } => {
            let r = proxy_reconstruction(&ProxyConfig::default(), instances, seed)?;
            let rows = r
                .instances
                .iter()
                .map(|p| {
                    vec![
                        s(p.trial),
                        s(p.component[0]),
                        s(p.component[1]),
                        s(p.component[2]),
                        s(p.proxy_sum),
                        s(p.reconstructs()),
                        s(p.unique_fallback),
                    ]
                })
                .collect();
            Output {
                name: "proxy",
                json: serde_json::to_value(&r).expect("serializable"),
                header: vec![
                    "trial",
                    "cos_common",
                    "cos_unique1",
                    "cos_unique2",
                    "cos_proxy_sum",
                    "reconstructs",
                    "unique_fallback",
                ],
                rows,
            }
        }
    };
    let doc = json!({ "experiment": out.name, "seed": seed, "result": out.json });
    match &cfg.out {
        Some(dir) => {
            let json_path = dir.join(format!("theory-{}.json", out.name));
            write_file(&json_path, to_json(&doc).as_bytes())?;
            write_file(
                &dir.join(format!("theory-{}.csv", out.name)),
                &table_csv(&out.header, &out.rows)?,
            )?;
            println!("wrote {} and the matching .csv", json_path.display());
        }
        None => print!("{}", to_json(&doc)),
    }
    Ok(0)
}
