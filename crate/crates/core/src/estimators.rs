//! The six end-to-end pipelines, each producing an [`EstimateReport`].

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data_model::{FeatureMaps, PanelDataset, Setting, UnitTrajectory};
use crate::dgp::GroundTruth;
use crate::error::{Error, Result};
use crate::inference::{coordinate_cis, effect_ci, matrix_rows, sandwich, Diagnostics, EstimateReport};
use crate::nuisance::{fit_nuisance_set, split_halves_for, LearnerConfig, NuisanceModel, NuisanceSet};
use crate::rng::derive_seed;
use crate::snmm::{assemble_system, recursive_closed_form, solve_theta, Design, Representation, ScoreFamily, ScoreOptions, ScoreSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Residual-on-residual regression of the realized long-term outcome on `T_1`.
    Total,
    /// Surrogate index without dynamic adjustment.
    Surrogate,
    /// Joint dynamic blocks on the realized long-term outcome.
    AdjTotal,
    /// Dynamically adjusted surrogate index on the long-term data alone.
    AdjSurrogate,
    /// Experimental period-1 effect through the adjusted index.
    NewTreat,
    /// As `NewTreat` with the observational correction of the first block.
    DebNewTreat,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Total,
        EstimatorKind::Surrogate,
        EstimatorKind::AdjTotal,
        EstimatorKind::AdjSurrogate,
        EstimatorKind::NewTreat,
        EstimatorKind::DebNewTreat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Total => "total",
            EstimatorKind::Surrogate => "surrogate",
            EstimatorKind::AdjTotal => "adj_total",
            EstimatorKind::AdjSurrogate => "adj_surrogate",
            EstimatorKind::NewTreat => "new_treat",
            EstimatorKind::DebNewTreat => "deb_new_treat",
        }
    }

    pub fn design(self) -> Design {
        match self {
            EstimatorKind::NewTreat | EstimatorKind::DebNewTreat => Design::CrossDataset,
            _ => Design::LongTermOnly,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub learner: LearnerConfig,
    pub alpha: f64,
    pub seed: u64,
    /// Representation used by [`EstimatorKind::Surrogate`].
    pub surrogate_repr: Representation,
    pub score_options: ScoreOptions,
    /// Contrast for the effect interval; defaults to the first unit vector against zero.
    pub t1: Option<Vec<f64>>,
    pub t0: Option<Vec<f64>>,
    /// Also compute the plug-in recursive blip sums for dynamic estimators.
    pub closed_form_check: bool,
    /// Identity maps when absent.
    pub feature_maps: Option<FeatureMaps>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            learner: LearnerConfig::default(),
            alpha: 0.05,
            seed: 0,
            surrogate_repr: Representation::Orthogonal,
            score_options: ScoreOptions::default(),
            t1: None,
            t0: None,
            closed_form_check: false,
            feature_maps: None,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig("alpha must lie in (0, 1)".into()));
        }
        self.learner.validate()
    }

    pub fn maps_for(&self, data: &PanelDataset) -> Result<FeatureMaps> {
        let maps = self
            .feature_maps
            .clone()
            .unwrap_or_else(|| FeatureMaps::identity(data.dims.k_e, data.dims.k_o, data.dims.p));
        for (spec, k) in [(&maps.experimental, data.dims.k_e), (&maps.observational, data.dims.k_o)] {
            spec.validate()?;
            if spec.treatment_dim != k {
                return Err(Error::dim("feature map treatment", k, spec.treatment_dim));
            }
            if spec.state_dim != data.dims.p {
                return Err(Error::dim("feature map state", data.dims.p, spec.state_dim));
            }
        }
        Ok(maps)
    }
}

pub fn score_spec(kind: EstimatorKind, cfg: &EstimatorConfig, m: usize) -> ScoreSpec {
    let family = match kind {
        EstimatorKind::Total => ScoreFamily::LongTerm { dynamic: false },
        EstimatorKind::AdjTotal => ScoreFamily::LongTerm { dynamic: true },
        EstimatorKind::Surrogate => ScoreFamily::Surrogate {
            dynamic: false,
            repr: cfg.surrogate_repr,
        },
        EstimatorKind::AdjSurrogate | EstimatorKind::NewTreat => ScoreFamily::Surrogate {
            dynamic: true,
            repr: Representation::Index,
        },
        EstimatorKind::DebNewTreat => ScoreFamily::Surrogate {
            dynamic: true,
            repr: Representation::Orthogonal,
        },
    };
    ScoreSpec {
        family,
        design: kind.design(),
        options: cfg.score_options,
        m,
    }
}

/// The parameter each estimator targets: `θ_0` across datasets, `θ_{o,1}` on long-term data alone.
pub fn true_theta(kind: EstimatorKind, truth: &GroundTruth) -> DVector<f64> {
    match kind.design() {
        Design::CrossDataset => truth.theta0.clone(),
        Design::LongTermOnly => truth.theta_o[0].clone(),
    }
}

/// `‖θ̂_0 − θ_0‖₂`.
pub fn l2_error(report: &EstimateReport, truth: &DVector<f64>) -> f64 {
    (report.theta0() - truth).norm()
}

/// Fit, cross-fit and solve the estimator's moment system, then attach
/// sandwich intervals and diagnostics.
pub fn run_estimator(kind: EstimatorKind, data: &PanelDataset, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    cfg.validate()?;
    let maps = cfg.maps_for(data)?;
    let spec = score_spec(kind, cfg, data.dims.m);
    let settings = spec.required_settings();
    for &s in &settings {
        if data.count(s) == 0 {
            return Err(Error::SettingMissing(s));
        }
    }

    let folds = split_halves_for(data, derive_seed(cfg.seed, 0), &settings)?;
    let fit = |k: usize| -> Result<NuisanceSet> {
        fit_nuisance_set(data, &folds.halves[k], k as u8, &spec, &maps, &cfg.learner, derive_seed(cfg.seed, 1 + k as u64))
    };
    let sets = [fit(0)?, fit(1)?];
    let sys = assemble_system(data, &folds, &sets, &spec, &maps)?;
    let theta = solve_theta(&sys)?;
    let cov = sandwich(&sys, &theta)?;
    let cis = coordinate_cis(&theta, &cov, cfg.alpha);

    let first_map = spec.first_map(&maps);
    let k1 = first_map.treatment_dim;
    let t1 = match &cfg.t1 {
        Some(v) => DVector::from_vec(v.clone()),
        None => DVector::from_fn(k1, |i, _| if i == 0 { 1.0 } else { 0.0 }),
    };
    let t0 = cfg.t0.clone().map_or_else(|| DVector::zeros(k1), DVector::from_vec);
    if t1.len() != k1 || t0.len() != k1 {
        return Err(Error::dim("effect contrast", k1, t1.len().max(t0.len())));
    }
    let short_units: Vec<&UnitTrajectory> = folds
        .halves
        .iter()
        .flatten()
        .map(|&i| &data.units[i])
        .filter(|u| u.setting == spec.short_term_setting())
        .collect();
    let effect = effect_ci(&theta.theta0(), &short_units, first_map, &t1, &t0, &cov, cfg.alpha)?;

    let clipped = if spec.uses_odds() {
        folds
            .halves
            .iter()
            .flatten()
            .filter(|&&i| data.units[i].setting == Setting::Observational)
            .filter(|&&i| {
                let own = folds.fold(i).expect("unit belongs to a half");
                sets[usize::from(1 - own)].q(data.units[i].state(1)).1
            })
            .count()
    } else {
        0
    };
    let closed_form_theta_o = if cfg.closed_form_check && spec.dynamic() {
        let from = if spec.is_surrogate() { 2 } else { 1 };
        let blips = recursive_closed_form(data, &maps, from, &cfg.learner, derive_seed(cfg.seed, 3))?;
        Some(blips.sums.values().map(|v| v.iter().copied().collect()).collect())
    } else {
        None
    };

    let count = |s: Setting| folds.halves.iter().flatten().filter(|&&i| data.units[i].setting == s).count();
    Ok(EstimateReport {
        estimator: kind.name().into(),
        theta,
        v_hat: matrix_rows(&cov.v_hat),
        n: sys.n,
        alpha: cfg.alpha,
        coordinate_cis: cis,
        effect: Some(effect),
        diagnostics: Diagnostics {
            min_singular_values: sys.block_min_singular_values(),
            clipped_probabilities: clipped,
            n_experimental: count(Setting::Experimental),
            n_observational: count(Setting::Observational),
            v_asymmetry: cov.asymmetry,
            closed_form_theta_o,
        },
    })
}
