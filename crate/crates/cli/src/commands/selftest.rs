use fcl_core::selftest::{run_suite, SUITES};

use crate::args::GlobalArgs;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub fn selftest(g: &GlobalArgs, suites: &[String]) -> CliResult<i32> {
    let cfg = RunConfig::load(g.config.as_deref(), &g.overrides())?;
    let names: Vec<&str> = if suites.is_empty() {
        SUITES.to_vec()
    } else {
        suites.iter().map(String::as_str).collect()
    };
    if let Some(bad) = names.iter().find(|n| !SUITES.contains(n)) {
        return Err(CliError::usage(format!(
            "unknown suite `{bad}` (known: {})",
            SUITES.join(", ")
        )));
    }
    let mut failed = 0;
    for name in names {
        let line = match run_suite(name, cfg.seed) {
            Ok(o) => {
                let status = if o.ok() { "PASS" } else { "FAIL" };
                failed += usize::from(!o.ok());
                let over = if o.within_budget() { "" } else { " [over budget]" };
                format!(
                    "{status} {name} ({:.2}s / {:.0}s){over}: {}",
                    o.seconds, o.budget_seconds, o.detail
                )
            }
            Err(e) => {
                failed += 1;
                format!("FAIL {name}: error: {e}")
            }
        };
        println!("{line}");
    }
    Ok(if failed == 0 { 0 } else { 1 })
}
