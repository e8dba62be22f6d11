//! Monte Carlo sweeps over (n, M, estimator, replication).

use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dynsurr::dgp::GroundTruth;
use dynsurr::estimators::{l2_error, run_estimator, true_theta, EstimatorConfig, EstimatorKind};
use dynsurr::inference::EstimateReport;
use dynsurr::rng::derive_seed;
use dynsurr::ErrorCategory;

use crate::config::{Dgp, ExperimentConfig};
use crate::error::{CliError, Result};

/// One replication of one estimator in one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub n: usize,
    pub m: usize,
    pub estimator: String,
    pub rep: usize,
    pub seed: u64,
    /// `ok`, `config_error`, `data_error` or `numerical_error`.
    pub status: String,
    pub l2_error: Option<f64>,
    /// Share of first-block coordinates whose interval covers the truth.
    pub coverage: Option<f64>,
    /// Space-separated 0/1 indicators, one per first-block coordinate.
    pub covered: String,
    pub effect_covered: Option<u8>,
    /// Mean first-block interval width.
    pub ci_width: Option<f64>,
    pub wall_ms: f64,
    pub message: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// All columns except the wall time.
    pub fn without_timing(&self) -> ResultRow {
        ResultRow {
            wall_ms: 0.0,
            ..self.clone()
        }
    }
}

fn status_of(e: &dynsurr::Error) -> &'static str {
    match e.category() {
        ErrorCategory::Config => "config_error",
        ErrorCategory::Data => "data_error",
        ErrorCategory::Numerical => "numerical_error",
    }
}

/// Seed of replication `rep` in cell `(n, m)`; independent of R and of the other cells.
pub fn replication_seed(base: u64, n: usize, m: usize, rep: usize) -> u64 {
    derive_seed(derive_seed(derive_seed(base, n as u64), m as u64), rep as u64)
}

fn score_report(kind: EstimatorKind, report: &EstimateReport, truth: &GroundTruth) -> (f64, Vec<bool>, Option<bool>, f64) {
    let target = true_theta(kind, truth);
    let first: Vec<_> = report.coordinate_cis.iter().filter(|c| c.block == 0).collect();
    let covered: Vec<bool> = first.iter().map(|c| c.ci.contains(target[c.index])).collect();
    let width = first.iter().map(|c| c.ci.width()).sum::<f64>() / first.len().max(1) as f64;
    let effect = report.effect.as_ref().map(|e| {
        let delta = DVector::from_column_slice(&e.t1) - DVector::from_column_slice(&e.t0);
        e.ci.contains(target.dot(&delta))
    });
    (l2_error(report, &target), covered, effect, width)
}

fn run_cell_rep(cfg: &ExperimentConfig, dgp: &Dgp, truth: &GroundTruth, n: usize, m: usize, rep: usize) -> Vec<ResultRow> {
    let seed = replication_seed(cfg.seed, n, m, rep);
    let row = |kind: EstimatorKind| ResultRow {
        n,
        m,
        estimator: kind.name().into(),
        rep,
        seed,
        status: String::new(),
        l2_error: None,
        coverage: None,
        covered: String::new(),
        effect_covered: None,
        ci_width: None,
        wall_ms: 0.0,
        message: String::new(),
    };
    let start = Instant::now();
    let data = match dgp.simulate(n, seed) {
        Ok(d) => d,
        Err(CliError::Core(e)) => {
            let ms = start.elapsed().as_secs_f64() * 1e3;
            return cfg
                .estimators
                .iter()
                .map(|&k| ResultRow {
                    status: status_of(&e).into(),
                    message: e.to_string(),
                    wall_ms: ms,
                    ..row(k)
                })
                .collect();
        }
        Err(e) => unreachable!("simulation only raises library errors: {e}"),
    };
    let est_cfg = EstimatorConfig {
        learner: cfg.learner.clone(),
        alpha: cfg.alpha,
        seed,
        surrogate_repr: cfg.surrogate_repr,
        ..EstimatorConfig::default()
    };
    cfg.estimators
        .iter()
        .map(|&kind| {
            let start = Instant::now();
            let result = run_estimator(kind, &data, &est_cfg);
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            match result {
                Ok(report) => {
                    let (l2, covered, effect, width) = score_report(kind, &report, truth);
                    ResultRow {
                        status: "ok".into(),
                        l2_error: Some(l2),
                        coverage: Some(covered.iter().filter(|c| **c).count() as f64 / covered.len().max(1) as f64),
                        covered: covered.iter().map(|c| if *c { "1" } else { "0" }).collect::<Vec<_>>().join(" "),
                        effect_covered: effect.map(u8::from),
                        ci_width: Some(width),
                        wall_ms,
                        ..row(kind)
                    }
                }
                Err(e) => ResultRow {
                    status: status_of(&e).into(),
                    message: e.to_string(),
                    wall_ms,
                    ..row(kind)
                },
            }
        })
        .collect()
}

/// Runs every cell; rows come back in (n, M, rep, estimator) order whatever the thread count.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let dgps = cfg
        .m_grid
        .iter()
        .map(|&m| {
            let dgp = cfg.resolve_dgp(m)?;
            let truth = dgp.ground_truth();
            Ok((m, dgp, truth))
        })
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..dgps.len()).flat_map(move |j| (0..cfg.replications).map(move |r| (n, j, r))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let rows: Vec<Vec<ResultRow>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(n, j, r)| {
                let (m, dgp, truth) = &dgps[j];
                run_cell_rep(cfg, dgp, truth, n, *m, r)
            })
            .collect()
    });
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_results<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Results(e.to_string()))?;
    }
    w.flush().map_err(CliError::io("results"))?;
    Ok(())
}

pub fn read_results<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::Results(format!("row {}: {e}", i + 1))))
        .collect()
}

/// Aggregates of one (n, M, estimator) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub m: usize,
    pub estimator: String,
    pub replications: usize,
    pub succeeded: usize,
    pub mean_l2: f64,
    pub sd_l2: f64,
    pub q05_l2: f64,
    pub q25_l2: f64,
    pub median_l2: f64,
    pub q75_l2: f64,
    pub q95_l2: f64,
    pub mean_coverage: f64,
    pub effect_coverage: f64,
    pub mean_ci_width: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean of values sorted first, so the result does not depend on row order.
fn sorted_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn estimator_rank(name: &str) -> usize {
    EstimatorKind::ALL.iter().position(|k| k.name() == name).unwrap_or(usize::MAX)
}

/// Per-cell summaries ordered by (n, M, estimator order).
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, usize, usize, &str)> = rows
        .iter()
        .map(|r| (r.n, r.m, estimator_rank(&r.estimator), r.estimator.as_str()))
        .collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(n, m, _, est)| {
            let cell: Vec<&ResultRow> = rows.iter().filter(|r| r.n == n && r.m == m && r.estimator == est).collect();
            let ok: Vec<&&ResultRow> = cell.iter().filter(|r| r.is_ok()).collect();
            let mut errs: Vec<f64> = ok.iter().filter_map(|r| r.l2_error).collect();
            errs.sort_by(f64::total_cmp);
            let mean = sorted_mean(errs.iter().copied());
            let sd = if errs.len() > 1 {
                (sorted_mean(errs.iter().map(|e| (e - mean).powi(2))) * errs.len() as f64 / (errs.len() - 1) as f64)
                    .sqrt()
            } else {
                f64::NAN
            };
            SummaryRow {
                n,
                m,
                estimator: est.into(),
                replications: cell.len(),
                succeeded: ok.len(),
                mean_l2: mean,
                sd_l2: sd,
                q05_l2: quantile(&errs, 0.05),
                q25_l2: quantile(&errs, 0.25),
                median_l2: quantile(&errs, 0.5),
                q75_l2: quantile(&errs, 0.75),
                q95_l2: quantile(&errs, 0.95),
                mean_coverage: sorted_mean(ok.iter().filter_map(|r| r.coverage)),
                effect_coverage: sorted_mean(ok.iter().filter_map(|r| r.effect_covered.map(f64::from))),
                mean_ci_width: sorted_mean(ok.iter().filter_map(|r| r.ci_width)),
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Results(e.to_string()))?;
    }
    w.flush().map_err(CliError::io("summary"))?;
    Ok(())
}
