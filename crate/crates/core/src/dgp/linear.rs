//! Linear Markov panel:
//! `T_t = D T_{t−1} + G S_{t−1} + σ_ζ ζ_t`, `S_t = A T_t + B S_{t−1} + σ_ε ε_t`,
//! `Y_t = C S_t + σ_η η_t`, with `B` and `C` shared by both settings.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::matrix_serde;
use crate::data_model::{PanelDataset, PanelDims, PanelMeta, PeriodRecord, Setting, UnitTrajectory};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingParams {
    #[serde(with = "matrix_serde")]
    pub a: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub d: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub g: DMatrix<f64>,
    /// Per-setting transition; accepted only when equal to the shared one.
    #[serde(default, with = "matrix_serde::option", skip_serializing_if = "Option::is_none")]
    pub b: Option<DMatrix<f64>>,
    /// Per-setting outcome loading; accepted only when equal to the shared one.
    #[serde(default, with = "matrix_serde::option", skip_serializing_if = "Option::is_none")]
    pub c: Option<DMatrix<f64>>,
}

impl SettingParams {
    pub fn new(a: DMatrix<f64>, d: DMatrix<f64>, g: DMatrix<f64>) -> Self {
        Self { a, d, g, b: None, c: None }
    }

    /// Randomized treatment with no dependence on the past.
    pub fn randomized(a: DMatrix<f64>) -> Self {
        let (p, k) = a.shape();
        Self::new(a, DMatrix::zeros(k, k), DMatrix::zeros(k, p))
    }

    pub fn k(&self) -> usize {
        self.a.ncols()
    }
}

fn default_burn_in() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDgpParams {
    pub p: usize,
    pub k_e: usize,
    pub k_o: usize,
    pub m: usize,
    #[serde(with = "matrix_serde")]
    pub b: DMatrix<f64>,
    /// `1 × p`.
    #[serde(with = "matrix_serde")]
    pub c: DMatrix<f64>,
    pub experimental: SettingParams,
    pub observational: SettingParams,
    pub sigma_eps: f64,
    pub sigma_eta: f64,
    pub sigma_zeta: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Record `Y_t` as an extra trailing surrogate coordinate.
    #[serde(default)]
    pub append_outcome_to_state: bool,
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

impl LinearDgpParams {
    pub fn setting(&self, s: Setting) -> &SettingParams {
        match s {
            Setting::Experimental => &self.experimental,
            Setting::Observational => &self.observational,
        }
    }

    /// Recorded surrogate dimension.
    pub fn recorded_p(&self) -> usize {
        self.p + usize::from(self.append_outcome_to_state)
    }

    pub fn dims(&self) -> PanelDims {
        PanelDims {
            p: self.recorded_p(),
            k_e: self.k_e,
            k_o: self.k_o,
            m: self.m,
        }
    }

    /// Joint transition of `(S, T)`: `[[B + A G, A D], [G, D]]`.
    pub fn joint_transition(&self, s: Setting) -> DMatrix<f64> {
        let sp = self.setting(s);
        let (p, k) = (self.p, sp.k());
        let mut f = DMatrix::zeros(p + k, p + k);
        f.view_mut((0, 0), (p, p)).copy_from(&(&self.b + &sp.a * &sp.g));
        f.view_mut((0, p), (p, k)).copy_from(&(&sp.a * &sp.d));
        f.view_mut((p, 0), (k, p)).copy_from(&sp.g);
        f.view_mut((p, p), (k, k)).copy_from(&sp.d);
        f
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p;
        let shape = |ctx: &str, m: &DMatrix<f64>, r: usize, c: usize| -> Result<()> {
            if m.nrows() != r {
                return Err(Error::dim(format!("{ctx} rows"), r, m.nrows()));
            }
            if m.ncols() != c {
                return Err(Error::dim(format!("{ctx} cols"), c, m.ncols()));
            }
            Ok(())
        };
        if self.m == 0 {
            return Err(Error::InvalidConfig("horizon M must be at least 1".into()));
        }
        shape("B", &self.b, p, p)?;
        shape("C", &self.c, 1, p)?;
        for (name, sp, k) in [("experimental", &self.experimental, self.k_e), ("observational", &self.observational, self.k_o)] {
            shape(&format!("{name} A"), &sp.a, p, k)?;
            shape(&format!("{name} D"), &sp.d, k, k)?;
            shape(&format!("{name} G"), &sp.g, k, p)?;
            if sp.b.as_ref().is_some_and(|b| b != &self.b) {
                return Err(Error::InvarianceViolation("B"));
            }
            if sp.c.as_ref().is_some_and(|c| c != &self.c) {
                return Err(Error::InvarianceViolation("C"));
            }
        }
        for s in [self.sigma_eps, self.sigma_eta, self.sigma_zeta] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidConfig("noise scales must be finite and non-negative".into()));
            }
        }
        let rho = spectral_radius(&self.b);
        if !(rho < 1.0) {
            return Err(Error::UnstableB { spectral_radius: rho });
        }
        for s in [Setting::Experimental, Setting::Observational] {
            let rho = spectral_radius(&self.joint_transition(s));
            if !(rho < 1.0) {
                return Err(Error::UnstableProcess { spectral_radius: rho });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }
}

/// Intervention `do(T_1 = t1, T_{>1} = 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Intervention {
    pub t1: DVector<f64>,
}

/// One simulated trajectory in model coordinates.
#[derive(Debug, Clone)]
pub struct Path {
    pub s0: DVector<f64>,
    pub t: Vec<DVector<f64>>,
    pub s: Vec<DVector<f64>>,
    pub y: Vec<f64>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)))
}

/// Simulate burn-in plus `horizon` periods. Every period draws its noise
/// even under an intervention, so paired runs share the same shocks.
pub fn simulate_path(params: &LinearDgpParams, setting: Setting, rng: &mut ChaCha8Rng, horizon: usize, intervention: Option<&Intervention>) -> Path {
    let sp = params.setting(setting);
    let (p, k) = (params.p, sp.k());
    let mut s = DVector::zeros(p);
    let mut t = DVector::zeros(k);
    let step = |s: &DVector<f64>, t: &DVector<f64>, rng: &mut ChaCha8Rng| {
        let zeta = normal_vec(rng, k, params.sigma_zeta);
        let eps = normal_vec(rng, p, params.sigma_eps);
        let eta = params.sigma_eta * rng.sample::<f64, _>(StandardNormal);
        let t_new = &sp.d * t + &sp.g * s + zeta;
        (t_new, eps, eta)
    };
    for _ in 0..params.burn_in {
        let (t_new, eps, _) = step(&s, &t, rng);
        s = &sp.a * &t_new + &params.b * &s + eps;
        t = t_new;
    }
    let s0 = s.clone();
    let mut path = Path {
        s0,
        t: Vec::with_capacity(horizon),
        s: Vec::with_capacity(horizon),
        y: Vec::with_capacity(horizon),
    };
    for period in 1..=horizon {
        let (mut t_new, eps, eta) = step(&s, &t, rng);
        if let Some(iv) = intervention {
            t_new = if period == 1 { iv.t1.clone() } else { DVector::zeros(k) };
        }
        s = &sp.a * &t_new + &params.b * &s + eps;
        let y = (&params.c * &s)[0] + eta;
        t = t_new;
        path.t.push(t.clone());
        path.s.push(s.clone());
        path.y.push(y);
    }
    path
}

fn record(params: &LinearDgpParams, id: String, setting: Setting, path: Path, with_outcome: bool) -> UnitTrajectory {
    let record_state = |s: &DVector<f64>, y: f64| {
        if params.append_outcome_to_state {
            let mut out = DVector::zeros(params.p + 1);
            out.rows_mut(0, params.p).copy_from(s);
            out[params.p] = y;
            out
        } else {
            s.clone()
        }
    };
    let s0 = record_state(&path.s0, 0.0);
    let periods = (0..path.t.len())
        .map(|i| PeriodRecord {
            t: i + 1,
            treatment: path.t[i].clone(),
            surrogates: record_state(&path.s[i], path.y[i]),
            outcome: with_outcome.then_some(path.y[i]),
        })
        .collect();
    UnitTrajectory {
        unit_id: id,
        setting,
        s0,
        periods,
    }
}

/// Units `0..n_e` are experimental and `n_e..` observational; unit `i` uses
/// the stream derived from `(seed, i)`.
pub fn simulate_linear(params: &LinearDgpParams, n_e: usize, n_o: usize, seed: u64) -> Result<PanelDataset> {
    params.validate()?;
    let mut units = Vec::with_capacity(n_e + n_o);
    for i in 0..n_e {
        let mut rng = derived_rng(seed, i as u64);
        let path = simulate_path(params, Setting::Experimental, &mut rng, 1, None);
        units.push(record(params, format!("e{i}"), Setting::Experimental, path, false));
    }
    for j in 0..n_o {
        let mut rng = derived_rng(seed, (n_e + j) as u64);
        let path = simulate_path(params, Setting::Observational, &mut rng, params.m, None);
        units.push(record(params, format!("o{j}"), Setting::Observational, path, true));
    }
    PanelDataset::new(
        units,
        params.dims(),
        PanelMeta {
            seed: Some(seed),
            provenance: "linear".into(),
        },
    )
}

/// `θ_0 = Σ_{j=1}^M (C B^{j−1} A_e)ᵀ` and `θ_{o,t} = Σ_{j=t}^M (C B^{j−t} A_o)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub theta0: DVector<f64>,
    /// `theta_o[t − 1] = θ_{o,t}` for `t = 1..=M`.
    pub theta_o: Vec<DVector<f64>>,
}

fn blip_sum(params: &LinearDgpParams, a: &DMatrix<f64>, periods: usize) -> DVector<f64> {
    let mut row = params.c.clone();
    let mut acc = DMatrix::zeros(1, a.ncols());
    for _ in 0..periods {
        acc += &row * a;
        row = &row * &params.b;
    }
    acc.transpose().column(0).into_owned()
}

pub fn ground_truth_theta(params: &LinearDgpParams) -> GroundTruth {
    let m = params.m;
    GroundTruth {
        theta0: blip_sum(params, &params.experimental.a, m),
        theta_o: (1..=m).map(|t| blip_sum(params, &params.observational.a, m - t + 1)).collect(),
    }
}

/// Mean paired difference of `Ȳ` under `do(T_1 = t1, T_{>1} = 0)` versus
/// `do(T_1 = t0, T_{>1} = 0)` over `n_mc` experimental-population draws.
pub fn counterfactual_oracle(params: &LinearDgpParams, t1: &DVector<f64>, t0: &DVector<f64>, n_mc: usize, seed: u64) -> f64 {
    let hi = Intervention { t1: t1.clone() };
    let lo = Intervention { t1: t0.clone() };
    let mut total = 0.0;
    for i in 0..n_mc {
        let a = simulate_path(params, Setting::Experimental, &mut derived_rng(seed, i as u64), params.m, Some(&hi));
        let b = simulate_path(params, Setting::Experimental, &mut derived_rng(seed, i as u64), params.m, Some(&lo));
        total += a.y.iter().sum::<f64>() - b.y.iter().sum::<f64>();
    }
    total / n_mc.max(1) as f64
}

/// Policy shape for [`random_linear_params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Observational treatments respond to past treatment and state.
    Adaptive,
    /// Observational treatments are independent draws.
    NonAdaptive,
}

/// Random stable parameters. `B` is scaled to spectral radius 0.5; the
/// experimental arm is randomized.
pub fn random_linear_params(p: usize, k: usize, m: usize, policy: PolicyKind, rng: &mut ChaCha8Rng) -> LinearDgpParams {
    let mut draw = |r: usize, c: usize, scale: f64| DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    let mut b = draw(p, p, 1.0);
    let rho = spectral_radius(&b);
    if rho > 0.0 {
        b *= 0.5 / rho;
    }
    let a = draw(p, k, 1.0 / (p as f64).sqrt());
    let c = draw(1, p, 1.0 / (p as f64).sqrt());
    let (d, g) = match policy {
        PolicyKind::Adaptive => (DMatrix::identity(k, k) * 0.3, draw(k, p, 0.2 / (p as f64).sqrt())),
        PolicyKind::NonAdaptive => (DMatrix::zeros(k, k), DMatrix::zeros(k, p)),
    };
    let mut params = LinearDgpParams {
        p,
        k_e: k,
        k_o: k,
        m,
        b,
        c,
        experimental: SettingParams::randomized(a.clone()),
        observational: SettingParams::new(a, d, g),
        sigma_eps: 1.0,
        sigma_eta: 0.5,
        sigma_zeta: 1.0,
        burn_in: 10,
        append_outcome_to_state: false,
    };
    // Shrink the policy until the joint process is stable.
    while spectral_radius(&params.joint_transition(Setting::Observational)) >= 0.95 {
        params.observational.g *= 0.5;
        params.observational.d *= 0.5;
    }
    params
}

/// Like [`random_linear_params`] with every coefficient nonnegative, so an
/// adaptive policy (`D = 0.5 I`, `G ≥ 0`) pushes later treatments in the
/// direction of the period-1 effect.
pub fn positive_linear_params(p: usize, k: usize, m: usize, policy: PolicyKind, rng: &mut ChaCha8Rng) -> LinearDgpParams {
    let mut draw = |r: usize, c: usize, scale: f64| DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal).abs());
    let mut b = draw(p, p, 1.0);
    b *= 0.5 / spectral_radius(&b);
    let a = draw(p, k, 1.0 / (p as f64).sqrt());
    let c = draw(1, p, 1.0 / (p as f64).sqrt());
    let g = draw(k, p, 0.3 / (p as f64).sqrt());
    let mut params = random_linear_params(p, k, m, policy, &mut rng_from(0));
    params.b = b;
    params.c = c;
    params.experimental = SettingParams::randomized(a.clone());
    params.observational = match policy {
        PolicyKind::Adaptive => SettingParams::new(a, DMatrix::identity(k, k) * 0.5, g),
        PolicyKind::NonAdaptive => SettingParams::new(a, DMatrix::zeros(k, k), DMatrix::zeros(k, p)),
    };
    while spectral_radius(&params.joint_transition(Setting::Observational)) >= 0.95 {
        params.observational.g *= 0.5;
        params.observational.d *= 0.5;
    }
    params
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn scalar(a: f64, b: f64, c: f64, d: f64, g: f64, m: usize) -> LinearDgpParams {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        LinearDgpParams {
            p: 1,
            k_e: 1,
            k_o: 1,
            m,
            b: s(b),
            c: s(c),
            experimental: SettingParams::randomized(s(a)),
            observational: SettingParams::new(s(a), s(d), s(g)),
            sigma_eps: 1.0,
            sigma_eta: 1.0,
            sigma_zeta: 1.0,
            burn_in: 10,
            append_outcome_to_state: false,
        }
    }

    #[test]
    fn noiseless_zero_policy_panel_is_zero() {
        let mut p = scalar(1.0, 0.5, 1.0, 0.0, 0.0, 3);
        p.sigma_eps = 0.0;
        p.sigma_eta = 0.0;
        p.sigma_zeta = 0.0;
        let ds = simulate_linear(&p, 3, 3, 1).unwrap();
        for u in &ds.units {
            assert!(u.s0.iter().all(|v| *v == 0.0));
            for r in &u.periods {
                assert!(r.treatment.iter().chain(r.surrogates.iter()).all(|v| *v == 0.0));
                assert!(r.outcome.is_none_or(|y| y == 0.0));
            }
        }
    }

    #[test]
    fn hand_recursion() {
        let mut p = scalar(1.0, 0.5, 1.0, 0.0, 0.0, 2);
        p.sigma_eps = 0.0;
        p.sigma_eta = 0.0;
        p.sigma_zeta = 0.0;
        let iv = Intervention { t1: DVector::from_element(1, 1.0) };
        let path = simulate_path(&p, Setting::Observational, &mut rng_from(0), 2, Some(&iv));
        assert_eq!(path.y, vec![1.0, 0.5]);
        assert_eq!(path.y.iter().sum::<f64>(), 1.5);
    }

    #[test]
    fn ground_truth_geometric() {
        assert_eq!(ground_truth_theta(&scalar(1.0, 0.5, 1.0, 0.0, 0.0, 2)).theta0[0], 1.5);
        assert_eq!(ground_truth_theta(&scalar(1.0, 0.5, 1.0, 0.0, 0.0, 3)).theta0[0], 1.75);
        let mut p = scalar(1.0, 0.5, 1.0, 0.0, 0.0, 3);
        p.experimental.a[(0, 0)] = 0.0;
        let gt = ground_truth_theta(&p);
        assert_eq!(gt.theta0[0], 0.0);
        assert_eq!(gt.theta_o.iter().map(|v| v[0]).collect::<Vec<_>>(), vec![1.75, 1.5, 1.0]);
    }

    #[test]
    fn oracle_matches_truth() {
        let p = scalar(1.0, 0.5, 1.0, 0.4, 0.3, 3);
        let t1 = DVector::from_element(1, 2.0);
        let t0 = DVector::from_element(1, 0.5);
        let cf = counterfactual_oracle(&p, &t1, &t0, 20, 5);
        assert!((cf - 1.75 * 1.5).abs() < 1e-10);
        assert_eq!(counterfactual_oracle(&p, &t1, &t1, 5, 5), 0.0);
    }

    #[test]
    fn stability_and_invariance_guards() {
        let p = scalar(1.0, 1.2, 1.0, 0.0, 0.0, 2);
        assert!(matches!(p.validate(), Err(Error::UnstableB { .. })));
        let p = scalar(1.0, 0.5, 1.0, 0.9, 0.9, 2);
        assert!(matches!(p.validate(), Err(Error::UnstableProcess { .. })));
        let mut p = scalar(1.0, 0.5, 1.0, 0.0, 0.0, 2);
        p.observational.b = Some(DMatrix::from_element(1, 1, 0.4));
        assert!(matches!(p.validate(), Err(Error::InvarianceViolation("B"))));
        let mut p = scalar(1.0, 0.5, 1.0, 0.0, 0.0, 2);
        p.experimental.c = Some(DMatrix::from_element(1, 1, 2.0));
        assert!(matches!(p.validate(), Err(Error::InvarianceViolation("C"))));
        let mut p = scalar(1.0, 0.5, 1.0, 0.0, 0.0, 2);
        p.experimental.c = Some(DMatrix::from_element(1, 1, 1.0));
        assert!(p.validate().is_ok());
    }

    #[test]
    fn json_roundtrip_and_determinism() {
        let p = random_linear_params(3, 2, 4, PolicyKind::Adaptive, &mut rng_from(3));
        let text = serde_json::to_string(&p).unwrap();
        let back = LinearDgpParams::from_json(&text).unwrap();
        assert_eq!(back, p);
        let a = simulate_linear(&p, 10, 10, 77).unwrap();
        let b = simulate_linear(&p, 10, 10, 77).unwrap();
        assert_eq!(a, b);
        assert!(LinearDgpParams::from_json(r#"{"p":1}"#).is_err());
    }

    #[test]
    fn appended_outcome_coordinate() {
        let mut p = scalar(1.0, 0.5, 1.0, 0.0, 0.0, 2);
        p.append_outcome_to_state = true;
        let ds = simulate_linear(&p, 2, 2, 4).unwrap();
        assert_eq!(ds.dims.p, 2);
        let o = &ds.units[2];
        assert_eq!(o.state(2)[1], o.outcome(2).unwrap());
    }
}
