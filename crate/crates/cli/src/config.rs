//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dynsurr::dgp::{
    ground_truth_theta, positive_linear_params, GroundTruth, LinearDgpParams, PolicyKind, SemiSynthConfig,
    SemiSynthModel,
};
use dynsurr::data_model::PanelDataset;
use dynsurr::estimators::EstimatorKind;
use dynsurr::nuisance::LearnerConfig;
use dynsurr::rng::rng_from;
use dynsurr::snmm::Representation;

use crate::error::{CliError, Result};

/// Coefficients drawn by the library's positive-coefficient generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomLinear {
    pub p: usize,
    pub k: usize,
    pub policy: PolicyKind,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DgpSpec {
    /// Exactly one of `params_file` and `random`.
    Linear {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params_file: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        random: Option<RandomLinear>,
    },
    /// Library defaults when `params_file` is absent.
    Semi {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params_file: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dgp: DgpSpec,
    /// Units per setting.
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default = "default_surrogate_repr")]
    pub surrogate_repr: Representation,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_estimators() -> Vec<EstimatorKind> {
    EstimatorKind::ALL.to_vec()
}

fn default_replications() -> usize {
    1
}

fn default_alpha() -> f64 {
    0.05
}

fn default_surrogate_repr() -> Representation {
    Representation::Orthogonal
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    /// Parse and validate; relative parameter files resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        match &mut cfg.dgp {
            DgpSpec::Linear { params_file, .. } | DgpSpec::Semi { params_file } => {
                if let Some(p) = params_file {
                    if p.is_relative() {
                        *p = base_dir.join(&*p);
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CliError::Config(msg.into()));
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.n_grid.is_empty() || self.m_grid.is_empty() || self.estimators.is_empty() {
            return bad("n_grid, m_grid and estimators must be non-empty");
        }
        if self.n_grid.contains(&0) || self.m_grid.contains(&0) {
            return bad("grid entries must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if let DgpSpec::Linear { params_file, random } = &self.dgp {
            if params_file.is_some() == random.is_some() {
                return bad("linear dgp needs exactly one of params_file and random");
            }
        }
        self.learner.validate()?;
        Ok(())
    }

    /// The generator for horizon `m`.
    pub fn resolve_dgp(&self, m: usize) -> Result<Dgp> {
        match &self.dgp {
            DgpSpec::Linear { params_file, random } => {
                let mut params = match (params_file, random) {
                    (Some(path), _) => {
                        LinearDgpParams::from_json(&fs::read_to_string(path).map_err(CliError::io(path))?)?
                    }
                    (None, Some(r)) => positive_linear_params(r.p, r.k, m, r.policy, &mut rng_from(r.seed)),
                    (None, None) => unreachable!("validated"),
                };
                params.m = m;
                params.validate()?;
                Ok(Dgp::Linear(params))
            }
            DgpSpec::Semi { params_file } => {
                let mut cfg = match params_file {
                    Some(path) => SemiSynthConfig::from_json(&fs::read_to_string(path).map_err(CliError::io(path))?)?,
                    None => SemiSynthConfig::default(),
                };
                cfg.m = m;
                Ok(Dgp::Semi(Box::new(SemiSynthModel::build(&cfg)?)))
            }
        }
    }
}

pub enum Dgp {
    Linear(LinearDgpParams),
    Semi(Box<SemiSynthModel>),
}

impl Dgp {
    /// `n` units in each setting.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<PanelDataset> {
        Ok(match self {
            Dgp::Linear(p) => dynsurr::dgp::simulate_linear(p, n, n, seed)?,
            Dgp::Semi(m) => m.simulate(n, seed)?,
        })
    }

    pub fn ground_truth(&self) -> GroundTruth {
        match self {
            Dgp::Linear(p) => ground_truth_theta(p),
            Dgp::Semi(m) => m.ground_truth(),
        }
    }
}
