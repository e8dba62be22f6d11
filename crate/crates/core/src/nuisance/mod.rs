//! First-stage learners and the cross-fitted nuisance functions.
//!
//! Conditional means are fitted per coordinate on a shared design. The
//! short-term role (`h`, `p_{e,1}`, `p_{e,t}` and the regression part of `q`)
//! is fitted on the same half as the long-term models whose predictions it
//! consumes.

mod linear;
mod logistic;
mod split;

pub use linear::{fit_lasso, fit_lasso_cv, fit_ols, fit_ols_multi, LassoCvConfig, LassoCvFit, LinearModel, Regularization};
pub use logistic::{fit_logistic, LogisticModel};
pub use split::{split_halves, split_halves_for, FoldPair};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_model::{cumulative_outcome, FeatureMapSpec, FeatureMaps, PanelDataset, Setting, UnitTrajectory};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::snmm::ScoreSpec;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    #[default]
    Ols,
    LassoCv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NuisanceRole {
    #[serde(rename = "g")]
    G,
    #[serde(rename = "g_t")]
    GT,
    #[serde(rename = "q")]
    Q,
    #[serde(rename = "h")]
    H,
    #[serde(rename = "p_e1")]
    PE1,
    #[serde(rename = "p_et")]
    PET,
    #[serde(rename = "b_ot")]
    BOT,
    #[serde(rename = "p_o_tau_t")]
    POTauT,
}

impl NuisanceRole {
    pub const ALL: [NuisanceRole; 8] = [
        NuisanceRole::G,
        NuisanceRole::Q,
        NuisanceRole::H,
        NuisanceRole::PE1,
        NuisanceRole::GT,
        NuisanceRole::PET,
        NuisanceRole::BOT,
        NuisanceRole::POTauT,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NuisanceRole::G => "g",
            NuisanceRole::GT => "g_t",
            NuisanceRole::Q => "q",
            NuisanceRole::H => "h",
            NuisanceRole::PE1 => "p_e1",
            NuisanceRole::PET => "p_et",
            NuisanceRole::BOT => "b_ot",
            NuisanceRole::POTauT => "p_o_tau_t",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub default: LearnerKind,
    pub roles: BTreeMap<NuisanceRole, LearnerKind>,
    pub lasso: LassoCvConfig,
    pub clip_eps: f64,
    /// Fit `p_{o,τ,2}` separately instead of reusing `g_τ`.
    pub separate_p_o_tau_2: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            default: LearnerKind::Ols,
            roles: BTreeMap::new(),
            lasso: LassoCvConfig::default(),
            clip_eps: 1e-3,
            separate_p_o_tau_2: false,
        }
    }
}

impl LearnerConfig {
    pub fn lasso() -> Self {
        Self {
            default: LearnerKind::LassoCv,
            ..Default::default()
        }
    }

    pub fn kind(&self, role: NuisanceRole) -> LearnerKind {
        self.roles.get(&role).copied().unwrap_or(self.default)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 0.5) {
            return Err(Error::InvalidConfig("clip_eps must lie in (0, 0.5)".into()));
        }
        if self.lasso.n_folds < 2 {
            return Err(Error::InvalidConfig("lasso needs at least 2 CV folds".into()));
        }
        Ok(())
    }
}

/// Coordinate-wise linear prediction of a vector target.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub models: Vec<LinearModel>,
}

impl Regression {
    pub fn predict(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.models.len(), self.models.iter().map(|m| m.predict(x)))
    }

    pub fn predict_scalar(&self, x: &DVector<f64>) -> f64 {
        self.models[0].predict(x)
    }

    pub fn input_dim(&self) -> usize {
        self.models.first().map_or(0, |m| m.coefficients.len())
    }
}

pub fn fit_regression(kind: LearnerKind, x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &LearnerConfig, seed: u64) -> Result<Regression> {
    let models = match kind {
        LearnerKind::Ols => fit_ols_multi(x, y, true)?,
        LearnerKind::LassoCv => (0..y.ncols())
            .map(|c| {
                let yc = y.column(c).into_owned();
                fit_lasso_cv(x, &yc, &cfg.lasso, derive_seed(seed, c as u64)).map(|f| f.model)
            })
            .collect::<Result<_>>()?,
    };
    Ok(Regression { models })
}

fn stack_rows(rows: &[DVector<f64>], width: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j])
}

/// `φ(T_t, S_{t−1})` for a unit.
pub fn period_feature(map: &FeatureMapSpec, unit: &UnitTrajectory, t: usize) -> Result<DVector<f64>> {
    map.eval(unit.treatment(t), unit.state(t - 1))
}

/// Predictions of every nuisance function the scores may request.
///
/// Implemented by the cross-fitted [`NuisanceSet`] and by analytic oracles.
/// Periods are 1-based; `p_o(τ, t, ·)` is `E_o[Φ_{o,τ} | S_{t−1}]`.
pub trait NuisanceModel: Sync {
    fn g(&self, s1: &DVector<f64>) -> f64;
    fn g_t(&self, t: usize, s1: &DVector<f64>) -> DVector<f64>;
    /// `q(S_1)` and whether the odds component was clipped.
    fn q(&self, s1: &DVector<f64>) -> (DVector<f64>, bool);
    fn h(&self, s0: &DVector<f64>) -> f64;
    fn p_e1(&self, s0: &DVector<f64>) -> DVector<f64>;
    fn p_et(&self, t: usize, s0: &DVector<f64>) -> DVector<f64>;
    fn b_o(&self, t: usize, s_prev: &DVector<f64>) -> f64;
    fn p_o(&self, tau: usize, t: usize, s_prev: &DVector<f64>) -> DVector<f64>;
}

#[derive(Debug, Clone)]
pub struct NuisanceSet {
    /// Half the models were trained on.
    pub fold: u8,
    pub spec: ScoreSpec,
    pub clip_eps: f64,
    pub g: Option<Regression>,
    pub g_t: BTreeMap<usize, Regression>,
    pub q_reg: Option<Regression>,
    pub odds: Option<LogisticModel>,
    pub h: Option<Regression>,
    pub p_e1: Option<Regression>,
    pub p_et: BTreeMap<usize, Regression>,
    pub b_o: BTreeMap<usize, Regression>,
    /// Keyed by `(τ, t)`.
    pub p_o: BTreeMap<(usize, usize), Regression>,
}

fn role_seed(seed: u64, role: NuisanceRole, a: usize, b: usize) -> u64 {
    derive_seed(derive_seed(seed, role as u64), (a * 64 + b) as u64)
}

/// Fit all nuisances `spec` needs on the units in `train`.
pub fn fit_nuisance_set(
    data: &PanelDataset,
    train: &[usize],
    fold: u8,
    spec: &ScoreSpec,
    maps: &FeatureMaps,
    cfg: &LearnerConfig,
    seed: u64,
) -> Result<NuisanceSet> {
    let m = spec.m;
    let p = data.dims.p;
    let d_o = maps.d_o();
    let obs: Vec<&UnitTrajectory> = train
        .iter()
        .map(|&i| &data.units[i])
        .filter(|u| u.setting == Setting::Observational)
        .collect();
    if obs.is_empty() {
        return Err(Error::SettingMissing(Setting::Observational));
    }
    let short_setting = spec.short_term_setting();
    let short: Vec<&UnitTrajectory> = train
        .iter()
        .map(|&i| &data.units[i])
        .filter(|u| u.setting == short_setting)
        .collect();
    if spec.is_surrogate() && short.is_empty() {
        return Err(Error::SettingMissing(short_setting));
    }

    let mut set = NuisanceSet {
        fold,
        spec: *spec,
        clip_eps: cfg.clip_eps,
        g: None,
        g_t: BTreeMap::new(),
        q_reg: None,
        odds: None,
        h: None,
        p_e1: None,
        p_et: BTreeMap::new(),
        b_o: BTreeMap::new(),
        p_o: BTreeMap::new(),
    };

    let obs_state = |t: usize| -> DMatrix<f64> {
        let rows: Vec<DVector<f64>> = obs.iter().map(|u| u.state(t).clone()).collect();
        stack_rows(&rows, p)
    };
    let obs_phi = |tau: usize| -> Result<DMatrix<f64>> {
        let rows = obs
            .iter()
            .map(|u| period_feature(&maps.observational, u, tau))
            .collect::<Result<Vec<_>>>()?;
        Ok(stack_rows(&rows, d_o))
    };
    let obs_ybar = |t: usize| -> Result<DMatrix<f64>> {
        let ys = obs.iter().map(|u| cumulative_outcome(u, t)).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_column_slice(ys.len(), 1, &ys))
    };

    if spec.is_surrogate() {
        let s1_o = obs_state(1);
        let g = fit_regression(cfg.kind(NuisanceRole::G), &s1_o, &obs_ybar(1)?, cfg, role_seed(seed, NuisanceRole::G, 0, 0))?;
        if spec.dynamic() {
            for t in 2..=m {
                let gt = fit_regression(cfg.kind(NuisanceRole::GT), &s1_o, &obs_phi(t)?, cfg, role_seed(seed, NuisanceRole::GT, t, 0))?;
                set.g_t.insert(t, gt);
            }
        }

        let first_map = spec.first_map(maps);
        let d1 = first_map.output_dim();
        let s0_e = stack_rows(&short.iter().map(|u| u.s0.clone()).collect::<Vec<_>>(), p);
        let s1_e_rows: Vec<DVector<f64>> = short.iter().map(|u| u.state(1).clone()).collect();
        let s1_e = stack_rows(&s1_e_rows, p);
        let phi1 = stack_rows(
            &short
                .iter()
                .map(|u| period_feature(first_map, u, 1))
                .collect::<Result<Vec<_>>>()?,
            d1,
        );
        let p_e1 = fit_regression(cfg.kind(NuisanceRole::PE1), &s0_e, &phi1, cfg, role_seed(seed, NuisanceRole::PE1, 0, 0))?;

        let g_on_e = DMatrix::from_iterator(short.len(), 1, s1_e_rows.iter().map(|s| g.predict_scalar(s)));
        set.h = Some(fit_regression(cfg.kind(NuisanceRole::H), &s0_e, &g_on_e, cfg, role_seed(seed, NuisanceRole::H, 0, 0))?);
        for (&t, gt) in &set.g_t {
            let target = stack_rows(&s1_e_rows.iter().map(|s| gt.predict(s)).collect::<Vec<_>>(), d_o);
            let pet = fit_regression(cfg.kind(NuisanceRole::PET), &s0_e, &target, cfg, role_seed(seed, NuisanceRole::PET, t, 0))?;
            set.p_et.insert(t, pet);
        }

        if spec.uses_q() {
            let resid = &phi1 - stack_rows(&short.iter().map(|u| p_e1.predict(&u.s0)).collect::<Vec<_>>(), d1);
            set.q_reg = Some(fit_regression(cfg.kind(NuisanceRole::Q), &s1_e, &resid, cfg, role_seed(seed, NuisanceRole::Q, 0, 0))?);
            if spec.uses_odds() {
                let pooled: Vec<&UnitTrajectory> = short.iter().chain(obs.iter()).copied().collect();
                let x = stack_rows(&pooled.iter().map(|u| u.state(1).clone()).collect::<Vec<_>>(), p);
                let labels: Vec<bool> = pooled.iter().map(|u| u.setting == Setting::Experimental).collect();
                set.odds = Some(fit_logistic(&x, &labels)?);
            }
        }
        set.g = Some(g);
        set.p_e1 = Some(p_e1);
    }

    for t in spec.long_periods() {
        let x = obs_state(t - 1);
        let b = fit_regression(cfg.kind(NuisanceRole::BOT), &x, &obs_ybar(t)?, cfg, role_seed(seed, NuisanceRole::BOT, t, 0))?;
        set.b_o.insert(t, b);
        for tau in t..=spec.tau_max(t) {
            let reuse = if t == 2 && !cfg.separate_p_o_tau_2 { set.g_t.get(&tau).cloned() } else { None };
            let model = match reuse {
                Some(model) => model,
                None => fit_regression(cfg.kind(NuisanceRole::POTauT), &x, &obs_phi(tau)?, cfg, role_seed(seed, NuisanceRole::POTauT, tau, t))?,
            };
            set.p_o.insert((tau, t), model);
        }
    }
    Ok(set)
}

fn missing(role: &str) -> ! {
    panic!("nuisance {role} was not fitted for this score specification")
}

impl NuisanceModel for NuisanceSet {
    fn g(&self, s1: &DVector<f64>) -> f64 {
        self.g.as_ref().unwrap_or_else(|| missing("g")).predict_scalar(s1)
    }

    fn g_t(&self, t: usize, s1: &DVector<f64>) -> DVector<f64> {
        self.g_t.get(&t).unwrap_or_else(|| missing("g_t")).predict(s1)
    }

    fn q(&self, s1: &DVector<f64>) -> (DVector<f64>, bool) {
        let reg = self.q_reg.as_ref().unwrap_or_else(|| missing("q")).predict(s1);
        match &self.odds {
            Some(odds) => {
                let (pe, clipped) = odds.prob_clipped(s1, self.clip_eps);
                (reg * (pe / (1.0 - pe)), clipped)
            }
            None => (reg, false),
        }
    }

    fn h(&self, s0: &DVector<f64>) -> f64 {
        self.h.as_ref().unwrap_or_else(|| missing("h")).predict_scalar(s0)
    }

    fn p_e1(&self, s0: &DVector<f64>) -> DVector<f64> {
        self.p_e1.as_ref().unwrap_or_else(|| missing("p_e1")).predict(s0)
    }

    fn p_et(&self, t: usize, s0: &DVector<f64>) -> DVector<f64> {
        self.p_et.get(&t).unwrap_or_else(|| missing("p_et")).predict(s0)
    }

    fn b_o(&self, t: usize, s_prev: &DVector<f64>) -> f64 {
        self.b_o.get(&t).unwrap_or_else(|| missing("b_ot")).predict_scalar(s_prev)
    }

    fn p_o(&self, tau: usize, t: usize, s_prev: &DVector<f64>) -> DVector<f64> {
        self.p_o.get(&(tau, t)).unwrap_or_else(|| missing("p_o_tau_t")).predict(s_prev)
    }
}

/// Nuisance predictions at the units's short-term inputs `(S_0, S_1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortTermValues {
    pub g: f64,
    pub h: f64,
    pub p_e1: DVector<f64>,
    /// `g_t(S_1)` for `t = 2..=M`.
    pub g_t: Vec<DVector<f64>>,
    /// `p_{e,t}(S_0)` for `t = 2..=M`.
    pub p_et: Vec<DVector<f64>>,
}

/// Nuisance predictions along an observational trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTermValues {
    /// Surrogate-family quantities at `S_1`; absent for the long-term family.
    pub g: Option<f64>,
    pub q: Option<DVector<f64>>,
    pub g_t: Vec<DVector<f64>>,
    pub first_t: usize,
    /// `b_{o,t}(S_{t−1})` for `t = first_t..`.
    pub b_o: Vec<f64>,
    /// `p_o[t − first_t][τ − t] = p_{o,τ,t}(S_{t−1})`.
    pub p_o: Vec<Vec<DVector<f64>>>,
    pub clipped: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NuisanceValues {
    pub short: Option<ShortTermValues>,
    pub long: Option<LongTermValues>,
}

/// Evaluate the nuisances a unit's scores need under `spec`.
pub fn predict_nuisances(model: &dyn NuisanceModel, unit: &UnitTrajectory, spec: &ScoreSpec) -> Result<NuisanceValues> {
    let m = spec.m;
    let mut out = NuisanceValues::default();
    if spec.is_surrogate() && unit.setting == spec.short_term_setting() {
        if unit.horizon() < 1 {
            return Err(Error::dim(format!("unit {} periods", unit.unit_id), 1, 0));
        }
        let s0 = &unit.s0;
        let s1 = unit.state(1);
        let dynamic_t: Vec<usize> = if spec.dynamic() { (2..=m).collect() } else { Vec::new() };
        out.short = Some(ShortTermValues {
            g: model.g(s1),
            h: model.h(s0),
            p_e1: model.p_e1(s0),
            g_t: dynamic_t.iter().map(|&t| model.g_t(t, s1)).collect(),
            p_et: dynamic_t.iter().map(|&t| model.p_et(t, s0)).collect(),
        });
    }
    if unit.setting == Setting::Observational {
        if unit.horizon() < m {
            return Err(Error::dim(format!("unit {} periods", unit.unit_id), m, unit.horizon()));
        }
        let long_periods = spec.long_periods();
        let first_t = *long_periods.start();
        let mut lv = LongTermValues {
            g: None,
            q: None,
            g_t: Vec::new(),
            first_t,
            b_o: Vec::new(),
            p_o: Vec::new(),
            clipped: false,
        };
        if spec.uses_q() {
            let s1 = unit.state(1);
            let (q, clipped) = model.q(s1);
            lv.g = Some(model.g(s1));
            lv.q = Some(q);
            lv.clipped = clipped;
            if spec.dynamic() {
                lv.g_t = (2..=m).map(|t| model.g_t(t, s1)).collect();
            }
        }
        for t in long_periods {
            let s = unit.state(t - 1);
            lv.b_o.push(model.b_o(t, s));
            lv.p_o.push((t..=spec.tau_max(t)).map(|tau| model.p_o(tau, t, s)).collect());
        }
        out.long = Some(lv);
    }
    Ok(out)
}
