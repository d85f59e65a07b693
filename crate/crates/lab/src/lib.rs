//! Config-driven experiment runner: each run reads one JSON configuration,
//! executes a named scenario, and writes trajectories, tables, plots, and a
//! report into an output directory.

pub mod config;
pub mod error;
pub mod export;
pub mod report;
pub mod scenarios;
pub mod svg;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{Format, Scenario, ScenarioConfig, VariantSettings};
pub use error::{LabError, Result};
pub use export::{export_trajectory, import_trajectory, ladder_hash};
pub use report::{Check, RunReport};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the configured output directory.
    pub out_dir: Option<PathBuf>,
    /// Run backward masked integrations past the amplification budget.
    pub force: bool,
}

pub const REPORT_FILE: &str = "report.json";

pub fn output_dir(config: &ScenarioConfig, options: &RunOptions) -> PathBuf {
    options
        .out_dir
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| Path::new("out").join(config.scenario.name()))
}

/// Runs `config` and writes every artifact plus `report.json`.
pub fn run(config: &ScenarioConfig, options: &RunOptions) -> Result<RunReport> {
    config.validate()?;
    let out_dir = output_dir(config, options);
    std::fs::create_dir_all(&out_dir).map_err(|e| LabError::io(&out_dir, e))?;
    let params = config.ladder_params();
    let start = Instant::now();

    let mut ctx = scenarios::Context::new(config, out_dir.clone(), options.force);
    let echo = serde_json::to_string_pretty(config).map_err(|e| LabError::Config(e.to_string()))?;
    ctx.write("config.json", "config-json", &echo)?;
    let outcome = scenarios::execute(&mut ctx, params)?;
    ctx.timings.insert("total".into(), start.elapsed().as_secs_f64());

    let report = RunReport {
        scenario: config.scenario,
        config: config.clone(),
        ladder: params,
        ladder_hash: ladder_hash(&params),
        constraints: outcome.constraints,
        bounds: outcome.bounds,
        membership: outcome.membership,
        results: outcome.results,
        checks: outcome.checks,
        files: ctx.files,
        timings: ctx.timings,
        notes: ctx.notes,
    };
    let path = out_dir.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(&report).map_err(|e| LabError::Config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| LabError::io(&path, e))?;
    Ok(report)
}
