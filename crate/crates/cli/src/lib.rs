//! Front end for the `dynsurr` binary: simulation, single estimation runs,
//! Monte Carlo experiments and reporting.

pub mod config;
pub mod error;
pub mod experiment;
pub mod report;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use dynsurr::data_model::{load_panel_with_meta, save_panel};
use dynsurr::estimators::{run_estimator, EstimatorConfig, EstimatorKind};
use dynsurr::inference::EstimateReport;

pub use config::{Dgp, DgpSpec, ExperimentConfig, RandomLinear};
pub use error::{CliError, Result};
pub use experiment::{run_experiment, summarize, ResultRow, SummaryRow};
pub use report::cmd_report;

/// Simulates the first grid point of `cfg` into `out_dir/data.csv` plus its sidecar.
/// Nothing is written if the generator is invalid.
pub fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let dgp = cfg.resolve_dgp(cfg.m_grid[0])?;
    let data = dgp.simulate(cfg.n_grid[0], cfg.seed)?;
    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let path = out_dir.join("data.csv");
    save_panel(&data, &path)?;
    Ok(path)
}

pub fn load_estimator_config(path: &Path) -> Result<EstimatorConfig> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let cfg: EstimatorConfig = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_estimate(data_path: &Path, kind: EstimatorKind, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    cfg.validate()?;
    let data = load_panel_with_meta(data_path)?;
    Ok(run_estimator(kind, &data, cfg)?)
}

/// Runs the sweep and writes `results.csv`, `summary.csv` and the resolved config to `out_dir`.
pub fn cmd_experiment(cfg: &ExperimentConfig, out_dir: &Path, jobs: Option<usize>) -> Result<Vec<ResultRow>> {
    let rows = run_experiment(cfg, jobs)?;
    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let results = out_dir.join("results.csv");
    experiment::write_results(&rows, BufWriter::new(File::create(&results).map_err(CliError::io(&results))?))?;
    let summary = out_dir.join("summary.csv");
    experiment::write_summary(
        &summarize(&rows),
        BufWriter::new(File::create(&summary).map_err(CliError::io(&summary))?),
    )?;
    let resolved = out_dir.join("config.json");
    let text = serde_json::to_string_pretty(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(&resolved, text + "\n").map_err(CliError::io(&resolved))?;
    Ok(rows)
}
