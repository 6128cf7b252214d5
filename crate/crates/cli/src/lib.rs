//! Config-driven experiment runner.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod plot;
pub mod report;
pub mod verify;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};

pub use config::{Experiment, ExperimentConfig};
pub use report::{CheckResult, ExponentReport, Report};
pub use verify::verify_suite;

/// What a run wrote, and whether every check passed.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub summary: serde_json::Value,
    pub out_dir: PathBuf,
}

/// Computes the experiment without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    match cfg.experiment()? {
        Experiment::Loss => experiments::run_loss(cfg),
        Experiment::Frontier => experiments::run_frontier(cfg),
        Experiment::Quantize => experiments::run_quantize(cfg),
        Experiment::Prune => experiments::run_prune(cfg),
        Experiment::Density => experiments::run_density(cfg),
        Experiment::Densing => experiments::run_densing(cfg),
        Experiment::Verify => verify_suite(cfg),
        Experiment::Fit => experiments::run_fit(cfg),
    }
}

/// Runs the experiment and writes `results.csv`, any extra tables,
/// `summary.json` and, unless disabled, `plot.svg` into `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path, plot: bool) -> Result<RunOutcome> {
    let start = Instant::now();
    let report = execute(cfg)?;
    let elapsed = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    report::write_atomic(&out_dir.join("results.csv"), &report.results.to_csv()?)?;
    for (name, table) in &report.extra_tables {
        report::write_atomic(&out_dir.join(name), &table.to_csv()?)?;
    }
    let summary = report.summary(&serde_json::to_value(cfg)?, elapsed);
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    report::write_atomic(&out_dir.join("summary.json"), text.as_bytes())?;
    if plot && cfg.output.plot {
        if let Some(p) = &report.plot {
            report::write_atomic(&out_dir.join("plot.svg"), plot::render_svg(p).as_bytes())?;
        }
    }
    Ok(RunOutcome { report, summary, out_dir: out_dir.to_path_buf() })
}

/// Applies a subcommand to a config, rejecting a conflicting `experiment` key.
pub fn select_experiment(cfg: &mut ExperimentConfig, sub: Experiment) -> Result<()> {
    match cfg.experiment {
        Some(e) if e != sub => bail!("config names experiment `{}` but subcommand is `{}`", e.as_str(), sub.as_str()),
        _ => {
            cfg.experiment = Some(sub);
            Ok(())
        }
    }
}
