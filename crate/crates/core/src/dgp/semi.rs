//! Lag-`L` feed-forward panel generator with lumpy treatments.
//!
//! ```text
//! T_t = Σ_l κ_l T_{t−l} + Σ_l α_l S_{t−l} + λ D + η_t     (then thresholded)
//! S_t = θ T_t + Σ_l γ_l S_{t−l} + β D + ε_t
//! ```
//!
//! The recorded state is `(S_t, …, S_{t−L+1}, D)`, so the proxy recursion is
//! Markov in it and every lagged treatment acts on the future only through
//! recorded proxies.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::linear::{spectral_radius, GroundTruth};
use super::matrix_serde;
use crate::data_model::{PanelDataset, PanelDims, PanelMeta, PeriodRecord, Setting, UnitTrajectory};
use crate::error::{Error, Result};
use crate::inference::normal_quantile;
use crate::rng::{derived_rng, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceSpec {
    Given {
        #[serde(with = "matrix_serde")]
        matrix: DMatrix<f64>,
    },
    /// `Z Zᵀ / d + 0.1 I` with standard normal `Z`.
    Random { seed: u64 },
}

/// Lag-`l` coefficient entry `(i, j)` is `decay^{l−1} (own·[i = j] + cross·z_ij)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagProfile {
    pub own: f64,
    pub cross: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalTail {
    pub mu: f64,
    pub sigma: f64,
}

/// Two-component Gaussian body between the tail bands, lognormal excursions
/// beyond them. Tail probabilities are each 0.05 by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualMixture {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub sds: [f64; 2],
    pub left_prob: f64,
    pub right_prob: f64,
    pub left_tail: LogNormalTail,
    pub right_tail: LogNormalTail,
}

impl Default for ResidualMixture {
    fn default() -> Self {
        let tail = LogNormalTail { mu: -1.0, sigma: 0.5 };
        Self {
            weights: [0.7, 0.3],
            means: [-0.15, 0.35],
            sds: [0.6, 1.1],
            left_prob: 0.05,
            right_prob: 0.05,
            left_tail: tail,
            right_tail: tail,
        }
    }
}

impl ResidualMixture {
    /// Point mass at zero.
    pub fn degenerate() -> Self {
        let tail = LogNormalTail { mu: 0.0, sigma: 0.0 };
        Self {
            weights: [0.5, 0.5],
            means: [0.0, 0.0],
            sds: [0.0, 0.0],
            left_prob: 0.0,
            right_prob: 0.0,
            left_tail: tail,
            right_tail: tail,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("residual mixture: {what}")));
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights[0] + self.weights[1] - 1.0).abs() > 1e-9 {
            return bad("weights must be nonnegative and sum to 1");
        }
        if self.sds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || self.means.iter().any(|m| !m.is_finite()) {
            return bad("component parameters must be finite with nonnegative sd");
        }
        if !(0.0..0.5).contains(&self.left_prob) || !(0.0..0.5).contains(&self.right_prob) {
            return bad("tail probabilities must lie in [0, 0.5)");
        }
        for tail in [self.left_tail, self.right_tail] {
            if !tail.mu.is_finite() || !(tail.sigma >= 0.0 && tail.sigma.is_finite()) {
                return bad("lognormal tails need finite mu and nonnegative sigma");
            }
        }
        Ok(())
    }

    pub fn body_cdf(&self, x: f64) -> f64 {
        (0..2)
            .map(|i| {
                let (m, s) = (self.means[i], self.sds[i]);
                let c = if s == 0.0 {
                    if x >= m { 1.0 } else { 0.0 }
                } else {
                    0.5 * libm::erfc(-(x - m) / (s * std::f64::consts::SQRT_2))
                };
                self.weights[i] * c
            })
            .sum()
    }

    pub fn body_pdf(&self, x: f64) -> f64 {
        (0..2)
            .filter(|&i| self.sds[i] > 0.0)
            .map(|i| {
                let z = (x - self.means[i]) / self.sds[i];
                self.weights[i] * (-0.5 * z * z).exp() / (self.sds[i] * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum()
    }

    /// Smallest `x` with `body_cdf(x) >= u`: Newton steps safeguarded by a
    /// shrinking bracket, falling back to bisection.
    pub fn body_quantile(&self, u: f64) -> f64 {
        let u = u.clamp(1e-15, 1.0 - 1e-15);
        let spread = self.sds[0].max(self.sds[1]);
        let mut lo = self.means[0].min(self.means[1]) - 40.0 * spread - 1.0;
        let mut hi = self.means[0].max(self.means[1]) + 40.0 * spread + 1.0;
        let mut x = self.weights[0] * self.means[0] + self.weights[1] * self.means[1];
        for _ in 0..200 {
            let f = self.body_cdf(x) - u;
            if f.abs() <= 1e-15 {
                return x;
            }
            if f >= 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            if hi - lo <= 1e-14 * (1.0 + hi.abs()) {
                break;
            }
            let d = self.body_pdf(x);
            let step = x - f / d;
            x = if d > 0.0 && step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        }
        hi
    }
}

fn lognormal_quantile(tail: LogNormalTail, v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    (tail.mu + tail.sigma * normal_quantile(v.min(1.0 - 1e-16))).exp()
}

/// Inverse-CDF draw from a uniform `u`.
pub fn sample_residual(mix: &ResidualMixture, u: f64) -> f64 {
    let (pl, pr) = (mix.left_prob, mix.right_prob);
    if pl > 0.0 && u < pl {
        mix.body_quantile(pl) - lognormal_quantile(mix.left_tail, (pl - u) / pl)
    } else if pr > 0.0 && u > 1.0 - pr {
        mix.body_quantile(1.0 - pr) + lognormal_quantile(mix.right_tail, (u - (1.0 - pr)) / pr)
    } else {
        mix.body_quantile(u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedCovariance {
    pub matrix: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal columns matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
    (vals, vecs)
}

/// Keep the top `k_top` eigenpairs of `base`, replace the remaining
/// eigenvalues by a floored linear fit over their rank and the remaining
/// eigenvectors by a random orthonormal completion.
pub fn perturb_covariance(base: &DMatrix<f64>, k_top: usize, seed: u64) -> Result<PerturbedCovariance> {
    let n = base.nrows();
    if base.ncols() != n || n == 0 {
        return Err(Error::NotSpd);
    }
    let sym = (base + base.transpose()) * 0.5;
    if (&sym - base).amax() > 1e-10 * (1.0 + base.amax()) || sym.clone().cholesky().is_none() {
        return Err(Error::NotSpd);
    }
    let (vals, vecs) = sorted_eigen(&sym);
    if k_top >= n {
        return Ok(PerturbedCovariance {
            matrix: base.clone(),
            eigenvalues: vals,
            eigenvectors: vecs,
        });
    }
    let floor = 1e-6 * vals[0];
    let rest = n - k_top;
    let mut new_vals = vals.clone();
    let cap = if k_top > 0 { vals[k_top - 1] * (1.0 - 1e-3) } else { f64::INFINITY };
    if rest == 1 {
        new_vals[k_top] = vals[k_top].clamp(floor, cap);
    } else {
        let xs: Vec<f64> = (0..rest).map(|i| i as f64).collect();
        let ys: Vec<f64> = (0..rest).map(|i| vals[k_top + i]).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / rest as f64, ys.iter().sum::<f64>() / rest as f64);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let slope = (sxy / sxx).min(0.0);
        for i in 0..rest {
            new_vals[k_top + i] = (my + slope * (xs[i] - mx)).clamp(floor, cap);
        }
    }

    let mut rng = rng_from(seed);
    let top = vecs.columns(0, k_top).into_owned();
    let mut z = DMatrix::from_fn(n, rest, |_, _| rng.sample::<f64, _>(StandardNormal));
    for _ in 0..2 {
        z -= &top * top.tr_mul(&z);
    }
    let q = z.qr().q();
    let mut basis = DMatrix::zeros(n, n);
    basis.columns_mut(0, k_top).copy_from(&top);
    basis.columns_mut(k_top, rest).copy_from(&q.columns(0, rest));
    let matrix = &basis * DMatrix::from_diagonal(&new_vals) * basis.transpose();
    let matrix = (&matrix + matrix.transpose()) * 0.5;
    Ok(PerturbedCovariance {
        matrix,
        eigenvalues: new_vals,
        eigenvectors: basis,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemiSynthConfig {
    pub n_vars: usize,
    pub n_treat: usize,
    pub lags: usize,
    pub n_demo: usize,
    pub m: usize,
    /// Covariance of one cross-section `(S, T, D)`, before perturbation.
    pub base_covariance: CovarianceSpec,
    pub top_k: usize,
    pub perturb_seed: u64,
    /// Multiplies the initial window draws; 0 gives a zero window.
    pub initial_scale: f64,
    pub treatment_lags: LagProfile,
    pub proxy_lags: LagProfile,
    pub feedback_lags: LagProfile,
    pub demo_treatment: f64,
    pub demo_proxy: f64,
    /// Entries of the proxy response to each existing treatment are `effect_scale·(0.5 + U)`.
    pub effect_scale: f64,
    /// Response scale of an extra treatment only the experiment carries.
    pub novel_effect: Option<f64>,
    pub treatment_residual: ResidualMixture,
    pub proxy_residual: ResidualMixture,
    /// Treatments below this are set to zero.
    pub lumpiness_threshold: f64,
    pub outcome_index: usize,
    pub burn_in: usize,
    pub coef_seed: u64,
    pub experiment_dose: f64,
    pub experiment_prob: f64,
}

impl Default for SemiSynthConfig {
    fn default() -> Self {
        Self {
            n_vars: 4,
            n_treat: 2,
            lags: 6,
            n_demo: 2,
            m: 4,
            base_covariance: CovarianceSpec::Random { seed: 7 },
            top_k: 4,
            perturb_seed: 11,
            initial_scale: 1.0,
            treatment_lags: LagProfile { own: 0.3, cross: 0.02, decay: 0.5 },
            proxy_lags: LagProfile { own: 0.3, cross: 0.03, decay: 0.5 },
            feedback_lags: LagProfile { own: 0.05, cross: 0.02, decay: 0.5 },
            demo_treatment: 0.1,
            demo_proxy: 0.2,
            effect_scale: 0.5,
            novel_effect: Some(0.4),
            treatment_residual: ResidualMixture::default(),
            proxy_residual: ResidualMixture::default(),
            lumpiness_threshold: 1.0,
            outcome_index: 0,
            burn_in: 10,
            coef_seed: 3,
            experiment_dose: 1.5,
            experiment_prob: 0.3,
        }
    }
}

impl SemiSynthConfig {
    pub fn k_e(&self) -> usize {
        self.n_treat + usize::from(self.novel_effect.is_some())
    }

    pub fn state_dim(&self) -> usize {
        self.lags * self.n_vars + self.n_demo
    }

    pub fn dims(&self) -> PanelDims {
        PanelDims {
            p: self.state_dim(),
            k_e: self.k_e(),
            k_o: self.n_treat,
            m: self.m,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn cross_section_dim(&self) -> usize {
        self.n_vars + self.n_treat + self.n_demo
    }

    fn validate_shape(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("semi-synthetic config: {what}")));
        if self.n_vars == 0 || self.n_treat == 0 || self.lags == 0 || self.m == 0 {
            return bad("n_vars, n_treat, lags and m must be positive");
        }
        if self.outcome_index >= self.n_vars {
            return bad("outcome_index out of range");
        }
        if !(0.0..=1.0).contains(&self.experiment_prob) {
            return bad("experiment_prob must lie in [0, 1]");
        }
        let finite = [
            self.initial_scale,
            self.demo_treatment,
            self.demo_proxy,
            self.effect_scale,
            self.lumpiness_threshold,
            self.experiment_dose,
            self.novel_effect.unwrap_or(0.0),
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("scalar parameters must be finite");
        }
        if let CovarianceSpec::Given { matrix } = &self.base_covariance {
            let d = self.cross_section_dim();
            if matrix.shape() != (d, d) {
                return Err(Error::dim("base covariance", d, matrix.nrows()));
            }
        }
        self.treatment_residual.validate()?;
        self.proxy_residual.validate()
    }
}

/// Coefficients drawn from a [`SemiSynthConfig`].
#[derive(Debug, Clone)]
pub struct SemiSynthModel {
    pub cfg: SemiSynthConfig,
    /// `k_o × k_o` per lag.
    pub kappa: Vec<DMatrix<f64>>,
    /// `k_o × n_vars` per lag.
    pub alpha: Vec<DMatrix<f64>>,
    /// `n_vars × n_vars` per lag.
    pub gamma: Vec<DMatrix<f64>>,
    pub lambda: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    /// `n_vars × k_e`; the observational response is its first `k_o` columns.
    pub theta: DMatrix<f64>,
    pub initial: PerturbedCovariance,
    initial_factor: DMatrix<f64>,
}

fn lag_matrices(rows: usize, cols: usize, lags: usize, profile: LagProfile, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    let base = DMatrix::from_fn(rows, cols, |i, j| {
        let z: f64 = rng.sample(StandardNormal);
        profile.own * f64::from(u8::from(i == j)) + profile.cross * z
    });
    (0..lags).map(|l| &base * profile.decay.powi(l as i32)).collect()
}

impl SemiSynthModel {
    pub fn build(cfg: &SemiSynthConfig) -> Result<Self> {
        cfg.validate_shape()?;
        let (p, k, nd, lags) = (cfg.n_vars, cfg.n_treat, cfg.n_demo, cfg.lags);
        let mut rng = rng_from(cfg.coef_seed);
        let kappa = lag_matrices(k, k, lags, cfg.treatment_lags, &mut rng);
        let alpha = lag_matrices(k, p, lags, cfg.feedback_lags, &mut rng);
        let gamma = lag_matrices(p, p, lags, cfg.proxy_lags, &mut rng);
        let lambda = DMatrix::from_fn(k, nd, |_, _| cfg.demo_treatment * rng.sample::<f64, _>(StandardNormal));
        let beta = DMatrix::from_fn(p, nd, |_, _| cfg.demo_proxy * rng.sample::<f64, _>(StandardNormal));
        let ke = cfg.k_e();
        let mut theta = DMatrix::zeros(p, ke);
        for j in 0..ke {
            let scale = if j < k { cfg.effect_scale } else { cfg.novel_effect.unwrap_or(0.0) };
            for i in 0..p {
                theta[(i, j)] = scale * (0.5 + rng.random::<f64>());
            }
        }

        let d = cfg.cross_section_dim();
        let base = match &cfg.base_covariance {
            CovarianceSpec::Given { matrix } => matrix.clone(),
            CovarianceSpec::Random { seed } => {
                let mut r = rng_from(*seed);
                let z = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal));
                &z * z.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1
            }
        };
        let initial = perturb_covariance(&base, cfg.top_k, cfg.perturb_seed)?;
        let initial_factor = initial.matrix.clone().cholesky().ok_or(Error::NotSpd)?.l();

        let model = Self {
            cfg: cfg.clone(),
            kappa,
            alpha,
            gamma,
            lambda,
            beta,
            theta,
            initial,
            initial_factor,
        };
        let radius = spectral_radius(&model.companion()).max(spectral_radius(&model.proxy_companion()));
        if !(radius < 1.0) {
            return Err(Error::UnstableCompanion { spectral_radius: radius });
        }
        Ok(model)
    }

    fn theta_o(&self) -> DMatrix<f64> {
        self.theta.columns(0, self.cfg.n_treat).into_owned()
    }

    /// Companion matrix of the untruncated joint `(S, T)` recursion.
    pub fn companion(&self) -> DMatrix<f64> {
        let (p, k, lags) = (self.cfg.n_vars, self.cfg.n_treat, self.cfg.lags);
        let b = p + k;
        let th = self.theta_o();
        let mut c = DMatrix::zeros(b * lags, b * lags);
        for l in 0..lags {
            let mut phi = DMatrix::zeros(b, b);
            phi.view_mut((0, 0), (p, p)).copy_from(&(&self.gamma[l] + &th * &self.alpha[l]));
            phi.view_mut((0, p), (p, k)).copy_from(&(&th * &self.kappa[l]));
            phi.view_mut((p, 0), (k, p)).copy_from(&self.alpha[l]);
            phi.view_mut((p, p), (k, k)).copy_from(&self.kappa[l]);
            c.view_mut((0, l * b), (b, b)).copy_from(&phi);
        }
        for l in 1..lags {
            c.view_mut((l * b, (l - 1) * b), (b, b)).fill_with_identity();
        }
        c
    }

    /// Companion matrix of the proxy recursion with treatments held at zero.
    pub fn proxy_companion(&self) -> DMatrix<f64> {
        let (p, lags) = (self.cfg.n_vars, self.cfg.lags);
        let mut c = DMatrix::zeros(p * lags, p * lags);
        for l in 0..lags {
            c.view_mut((0, l * p), (p, p)).copy_from(&self.gamma[l]);
        }
        for l in 1..lags {
            c.view_mut((l * p, (l - 1) * p), (p, p)).fill_with_identity();
        }
        c
    }

    /// Proxy responses `Δ_1..Δ_horizon` to a unit impulse in treatment column `col` at period 1.
    pub fn impulse_response(&self, col: usize, horizon: usize) -> Vec<DVector<f64>> {
        let mut out: Vec<DVector<f64>> = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let mut d = if t == 0 { self.theta.column(col).into_owned() } else { DVector::zeros(self.cfg.n_vars) };
            for l in 0..self.cfg.lags.min(t) {
                d += &self.gamma[l] * &out[t - 1 - l];
            }
            out.push(d);
        }
        out
    }

    fn blip_sum(&self, cols: usize, periods: usize) -> DVector<f64> {
        DVector::from_iterator(
            cols,
            (0..cols).map(|c| self.impulse_response(c, periods).iter().map(|d| d[self.cfg.outcome_index]).sum()),
        )
    }

    /// Effects of period-1 treatments on the cumulative outcome, from the
    /// noiseless impulse response.
    pub fn ground_truth(&self) -> GroundTruth {
        let m = self.cfg.m;
        GroundTruth {
            theta0: self.blip_sum(self.cfg.k_e(), m),
            theta_o: (1..=m).map(|t| self.blip_sum(self.cfg.n_treat, m - t + 1)).collect(),
        }
    }

    fn noise(&self, mix: &ResidualMixture, n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| sample_residual(mix, rng.random::<f64>())))
    }

    fn lump(&self, mut t: DVector<f64>) -> DVector<f64> {
        t.iter_mut().for_each(|v| {
            if *v < self.cfg.lumpiness_threshold {
                *v = 0.0
            }
        });
        t
    }

    fn record_state(&self, s_hist: &VecDeque<DVector<f64>>, demo: &DVector<f64>) -> DVector<f64> {
        let p = self.cfg.n_vars;
        let mut out = DVector::zeros(self.cfg.state_dim());
        for (l, s) in s_hist.iter().enumerate() {
            out.rows_mut(l * p, p).copy_from(s);
        }
        out.rows_mut(self.cfg.lags * p, self.cfg.n_demo).copy_from(demo);
        out
    }

    /// One unit. `setting` selects the response and the period-1 assignment:
    /// experimental units draw each treatment column independently as
    /// `dose·Bernoulli(prob)`. All shocks are drawn every period regardless
    /// of `intervention`, so paired runs share them.
    pub fn simulate_unit(&self, setting: Setting, horizon: usize, rng: &mut ChaCha8Rng, intervention: Option<&DVector<f64>>) -> SemiPath {
        let cfg = &self.cfg;
        let (p, k, nd, lags) = (cfg.n_vars, cfg.n_treat, cfg.n_demo, cfg.lags);
        // Most recent first.
        let mut s_hist: VecDeque<DVector<f64>> = VecDeque::with_capacity(lags + 1);
        let mut t_hist: VecDeque<DVector<f64>> = VecDeque::with_capacity(lags + 1);
        let mut demo = DVector::zeros(nd);
        for _ in 0..lags {
            let z = DVector::from_fn(p + k + nd, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &self.initial_factor * z * cfg.initial_scale;
            s_hist.push_front(x.rows(0, p).into_owned());
            t_hist.push_front(self.lump(x.rows(p, k).into_owned()));
            demo = x.rows(p + k, nd).into_owned();
        }
        let policy = |s_hist: &VecDeque<DVector<f64>>, t_hist: &VecDeque<DVector<f64>>, demo: &DVector<f64>, rng: &mut ChaCha8Rng| {
            let mut t = &self.lambda * demo + self.noise(&cfg.treatment_residual, k, rng);
            for l in 0..lags {
                t += &self.kappa[l] * &t_hist[l] + &self.alpha[l] * &s_hist[l];
            }
            self.lump(t)
        };
        let proxies = |t: &DVector<f64>, theta: &DMatrix<f64>, s_hist: &VecDeque<DVector<f64>>, demo: &DVector<f64>, rng: &mut ChaCha8Rng| {
            let mut s = theta * t + &self.beta * demo + self.noise(&cfg.proxy_residual, p, rng);
            for l in 0..lags {
                s += &self.gamma[l] * &s_hist[l];
            }
            s
        };
        let push = |hist: &mut VecDeque<DVector<f64>>, v: DVector<f64>| {
            hist.push_front(v);
            hist.truncate(lags);
        };
        let theta_o = self.theta_o();
        for _ in 0..cfg.burn_in {
            let t = policy(&s_hist, &t_hist, &demo, rng);
            let s = proxies(&t, &theta_o, &s_hist, &demo, rng);
            push(&mut t_hist, t);
            push(&mut s_hist, s);
        }

        let theta = match setting {
            Setting::Experimental => self.theta.clone(),
            Setting::Observational => theta_o.clone(),
        };
        let kk = theta.ncols();
        let mut path = SemiPath {
            s0: self.record_state(&s_hist, &demo),
            t: Vec::with_capacity(horizon),
            s: Vec::with_capacity(horizon),
            y: Vec::with_capacity(horizon),
        };
        for period in 1..=horizon {
            let natural = policy(&s_hist, &t_hist, &demo, rng);
            let assigned = if setting == Setting::Experimental && period == 1 {
                DVector::from_fn(kk, |_, _| {
                    if rng.random::<f64>() < cfg.experiment_prob { cfg.experiment_dose } else { 0.0 }
                })
            } else {
                let mut t = DVector::zeros(kk);
                t.rows_mut(0, k).copy_from(&natural);
                t
            };
            let t = match intervention {
                Some(t1) if period == 1 => t1.clone(),
                Some(_) => DVector::zeros(kk),
                None => assigned,
            };
            let s = proxies(&t, &theta, &s_hist, &demo, rng);
            path.y.push(s[cfg.outcome_index]);
            push(&mut t_hist, t.rows(0, k).into_owned());
            push(&mut s_hist, s);
            path.t.push(t);
            path.s.push(self.record_state(&s_hist, &demo));
        }
        path
    }

    /// Mean paired difference of `Ȳ` under `do(T_1 = t1, T_{>1} = 0)` versus
    /// `do(T_1 = t0, T_{>1} = 0)` over experimental-population draws.
    pub fn counterfactual_oracle(&self, t1: &DVector<f64>, t0: &DVector<f64>, n_mc: usize, seed: u64) -> f64 {
        let m = self.cfg.m;
        let mut total = 0.0;
        for i in 0..n_mc {
            let a = self.simulate_unit(Setting::Experimental, m, &mut derived_rng(seed, i as u64), Some(t1));
            let b = self.simulate_unit(Setting::Experimental, m, &mut derived_rng(seed, i as u64), Some(t0));
            total += a.y.iter().sum::<f64>() - b.y.iter().sum::<f64>();
        }
        total / n_mc.max(1) as f64
    }

    /// `n` experimental units (`e0..`) followed by `n` observational ones.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<PanelDataset> {
        let mut units = Vec::with_capacity(2 * n);
        for (offset, setting) in [(0, Setting::Experimental), (n, Setting::Observational)] {
            let horizon = match setting {
                Setting::Experimental => 1,
                Setting::Observational => self.cfg.m,
            };
            for i in 0..n {
                let path = self.simulate_unit(setting, horizon, &mut derived_rng(seed, (offset + i) as u64), None);
                let with_outcome = setting == Setting::Observational;
                units.push(UnitTrajectory {
                    unit_id: format!("{}{i}", setting.code()),
                    setting,
                    s0: path.s0,
                    periods: (0..horizon)
                        .map(|j| PeriodRecord {
                            t: j + 1,
                            treatment: path.t[j].clone(),
                            surrogates: path.s[j].clone(),
                            outcome: with_outcome.then_some(path.y[j]),
                        })
                        .collect(),
                });
            }
        }
        PanelDataset::new(
            units,
            self.cfg.dims(),
            PanelMeta {
                seed: Some(seed),
                provenance: "semi_synthetic".into(),
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiPath {
    pub s0: DVector<f64>,
    pub t: Vec<DVector<f64>>,
    /// Recorded states after each period.
    pub s: Vec<DVector<f64>>,
    pub y: Vec<f64>,
}

pub fn simulate_semi_synthetic(cfg: &SemiSynthConfig, n: usize, seed: u64) -> Result<PanelDataset> {
    SemiSynthModel::build(cfg)?.simulate(n, seed)
}

/// Share of observational unit-periods whose every treatment is zero.
pub fn zero_treatment_share(data: &PanelDataset) -> f64 {
    let (mut zero, mut total) = (0usize, 0usize);
    for u in data.units.iter().filter(|u| u.setting == Setting::Observational) {
        for p in &u.periods {
            total += 1;
            zero += usize::from(p.treatment.iter().all(|v| *v == 0.0));
        }
    }
    zero as f64 / total.max(1) as f64
}

/// Pearson correlation of `T_{t,col}` with `T_{t−1,col}` over observational units.
pub fn treatment_autocorrelation(data: &PanelDataset, col: usize) -> f64 {
    let pairs: Vec<(f64, f64)> = data
        .units
        .iter()
        .filter(|u| u.setting == Setting::Observational)
        .flat_map(|u| u.periods.windows(2).map(move |w| (w[0].treatment[col], w[1].treatment[col])))
        .collect();
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |a, (x, y)| (a.0 + x / n, a.1 + y / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_mixture_is_zero() {
        let mix = ResidualMixture::degenerate();
        for u in [1e-9, 0.1, 0.5, 0.9, 1.0 - 1e-9] {
            assert_eq!(sample_residual(&mix, u), 0.0);
        }
    }

    #[test]
    fn symmetric_mixture_has_zero_mean() {
        let tail = LogNormalTail { mu: -0.5, sigma: 0.4 };
        let mix = ResidualMixture {
            weights: [0.5, 0.5],
            means: [-0.4, 0.4],
            sds: [0.5, 0.5],
            left_prob: 0.05,
            right_prob: 0.05,
            left_tail: tail,
            right_tail: tail,
        };
        let n = 100_000;
        let mut rng = rng_from(5);
        let draws: Vec<f64> = (0..n).map(|_| sample_residual(&mix, rng.random::<f64>())).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn right_tail_lies_above_body() {
        let mix = ResidualMixture::default();
        let q95 = mix.body_quantile(0.95);
        let mut rng = rng_from(9);
        for _ in 0..5000 {
            let u = 0.95 + 0.05 * rng.random::<f64>();
            if u > 0.95 {
                assert!(sample_residual(&mix, u) > q95);
            }
        }
    }

    #[test]
    fn body_quantile_inverts_cdf() {
        let mix = ResidualMixture::default();
        for u in [0.05, 0.2, 0.5, 0.8, 0.95] {
            assert!((mix.body_cdf(mix.body_quantile(u)) - u).abs() < 1e-10);
        }
    }

    #[test]
    fn perturbing_identity_gives_orthonormal_basis() {
        let out = perturb_covariance(&DMatrix::identity(6, 6), 2, 1).unwrap();
        let q = &out.eigenvectors;
        assert!((q.tr_mul(q) - DMatrix::identity(6, 6)).amax() < 1e-10);
        assert!(out.eigenvalues.iter().all(|v| *v >= 1e-6));
    }

    #[test]
    fn full_rank_keep_returns_base() {
        let base = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(perturb_covariance(&base, 2, 0).unwrap().matrix, base);
    }

    #[test]
    fn top_eigenpairs_survive() {
        let mut rng = rng_from(2);
        let z = DMatrix::from_fn(20, 20, |_, _| rng.sample::<f64, _>(StandardNormal));
        let base = &z * z.transpose() / 20.0 + DMatrix::identity(20, 20) * 0.05;
        let out = perturb_covariance(&base, 4, 3).unwrap();
        let (bv, bvec) = sorted_eigen(&base);
        let (ov, ovec) = sorted_eigen(&out.matrix);
        assert!(ov[19] > 0.0);
        for i in 0..4 {
            assert!((bv[i] - ov[i]).abs() < 1e-8 * bv[0]);
            let dot = bvec.column(i).dot(&ovec.column(i)).abs();
            assert!((dot - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn non_spd_base_is_rejected() {
        let base = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(perturb_covariance(&base, 1, 0), Err(Error::NotSpd)));
    }

    fn quiet_config() -> SemiSynthConfig {
        SemiSynthConfig {
            initial_scale: 0.0,
            treatment_residual: ResidualMixture::degenerate(),
            proxy_residual: ResidualMixture::degenerate(),
            experiment_dose: 0.0,
            ..SemiSynthConfig::default()
        }
    }

    #[test]
    fn quiet_config_gives_zero_panel() {
        let data = simulate_semi_synthetic(&quiet_config(), 20, 4).unwrap();
        for u in &data.units {
            assert!(u.s0.iter().all(|v| *v == 0.0));
            for p in &u.periods {
                assert!(p.treatment.iter().chain(p.surrogates.iter()).all(|v| *v == 0.0));
                assert!(p.outcome.unwrap_or(0.0) == 0.0);
            }
        }
    }

    #[test]
    fn oracle_matches_impulse_response() {
        let model = SemiSynthModel::build(&SemiSynthConfig::default()).unwrap();
        let truth = model.ground_truth();
        let k = model.cfg.k_e();
        for c in 0..k {
            let mut t1 = DVector::zeros(k);
            t1[c] = 1.0;
            let got = model.counterfactual_oracle(&t1, &DVector::zeros(k), 5, 8);
            assert!((got - truth.theta0[c]).abs() < 1e-10, "{got} vs {}", truth.theta0[c]);
        }
    }

    #[test]
    fn default_panel_is_lumpy_and_persistent() {
        let data = simulate_semi_synthetic(&SemiSynthConfig::default(), 3000, 1).unwrap();
        assert!(zero_treatment_share(&data) >= 0.6, "{}", zero_treatment_share(&data));
        assert!(treatment_autocorrelation(&data, 0) > 0.0);
    }

    #[test]
    fn novel_column_only_in_experiment() {
        let data = simulate_semi_synthetic(&SemiSynthConfig::default(), 5, 2).unwrap();
        assert_eq!(data.dims.k_e, 3);
        assert_eq!(data.dims.k_o, 2);
        let e = data.units.iter().find(|u| u.setting == Setting::Experimental).unwrap();
        assert_eq!(e.periods[0].treatment.len(), 3);
    }

    #[test]
    fn exploding_lags_are_rejected() {
        let cfg = SemiSynthConfig {
            proxy_lags: LagProfile { own: 0.9, cross: 0.0, decay: 1.0 },
            ..SemiSynthConfig::default()
        };
        assert!(matches!(SemiSynthModel::build(&cfg), Err(Error::UnstableCompanion { .. })));
    }

    #[test]
    fn same_seed_same_panel() {
        let a = simulate_semi_synthetic(&SemiSynthConfig::default(), 10, 6).unwrap();
        let b = simulate_semi_synthetic(&SemiSynthConfig::default(), 10, 6).unwrap();
        assert_eq!(a.units, b.units);
    }
}
