use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dynsurr::estimators::{EstimatorConfig, EstimatorKind};
use dynsurr_cli::{cmd_estimate, cmd_experiment, cmd_report, cmd_simulate, load_estimator_config, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dynsurr", version, about = "Long-term effects from short-term surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the first (n, M) grid point of an experiment config into `<out>/data.csv`.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one estimator to a panel CSV and print the report as JSON.
    Estimate {
        data: PathBuf,
        #[arg(long, default_value = "deb_new_treat", value_parser = parse_kind)]
        estimator: EstimatorKind,
        /// Estimator config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Write `<out>/<estimator>.json` instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo sweep.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replaces the config's estimator list; repeatable.
        #[arg(long, value_parser = parse_kind)]
        estimator: Vec<EstimatorKind>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Summary table and box plots from a results CSV.
    Report {
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<EstimatorKind, String> {
    s.parse().map_err(|e: dynsurr::Error| e.to_string())
}

fn run(cli: Cli) -> dynsurr_cli::Result<()> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let path = cmd_simulate(&cfg, &out.unwrap_or_else(|| cfg.out_dir.clone()))?;
            println!("{}", path.display());
        }
        Command::Estimate {
            data,
            estimator,
            config,
            seed,
            alpha,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => load_estimator_config(&p)?,
                None => EstimatorConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(a) = alpha {
                cfg.alpha = a;
            }
            let json = cmd_estimate(&data, estimator, &cfg)?.to_json()? + "\n";
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
                    let path = dir.join(format!("{}.json", estimator.name()));
                    std::fs::write(&path, json).map_err(CliError::io(&path))?;
                    println!("{}", path.display());
                }
                None => std::io::stdout()
                    .write_all(json.as_bytes())
                    .map_err(CliError::io("<stdout>"))?,
            }
        }
        Command::Experiment {
            config,
            seed,
            jobs,
            out,
            estimator,
            alpha,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(a) = alpha {
                cfg.alpha = a;
            }
            if !estimator.is_empty() {
                cfg.estimators = estimator;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if jobs == Some(0) {
                return Err(CliError::Config("--jobs must be at least 1".into()));
            }
            let out_dir = cfg.out_dir.clone();
            let rows = cmd_experiment(&cfg, &out_dir, jobs)?;
            let failed = rows.iter().filter(|r| !r.is_ok()).count();
            eprintln!("{} rows written to {} ({failed} failed)", rows.len(), out_dir.display());
        }
        Command::Report { results, out } => {
            for path in cmd_report(&results, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
