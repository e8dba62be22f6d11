//! Sandwich covariance and normal confidence intervals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_model::{FeatureMapSpec, UnitTrajectory};
use crate::error::{Error, Result};
use crate::snmm::{MomentSystem, ThetaVector};

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichCovariance {
    pub j_hat: DMatrix<f64>,
    pub sigma_hat: DMatrix<f64>,
    /// Symmetrized `Ĵ⁻¹ Σ̂ Ĵ⁻ᵀ`.
    pub v_hat: DMatrix<f64>,
    pub n: usize,
    /// Relative asymmetry of `V̂` before symmetrization.
    pub asymmetry: f64,
}

/// `Ĵ = −G/n`, `Σ̂ = (1/n) Σ_i ψ_i(θ̂) ψ_i(θ̂)ᵀ`, `V̂ = Ĵ⁻¹ Σ̂ Ĵ⁻ᵀ`.
pub fn sandwich(sys: &MomentSystem, theta_hat: &ThetaVector) -> Result<SandwichCovariance> {
    let n = sys.n.max(1) as f64;
    let d = sys.dim();
    let j_hat = -&sys.g / n;
    let mut sigma_hat = DMatrix::zeros(d, d);
    for u in &sys.units {
        let psi = u.evaluate(&sys.dims, theta_hat);
        sigma_hat.ger(1.0, &psi, &psi, 1.0);
    }
    sigma_hat /= n;
    let j_inv = j_hat.clone().try_inverse().ok_or(Error::SingularJacobian)?;
    if j_inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularJacobian);
    }
    let v = &j_inv * &sigma_hat * j_inv.transpose();
    let scale = v.amax().max(f64::MIN_POSITIVE);
    let asymmetry = (&v - v.transpose()).amax() / scale;
    let v_hat = (&v + v.transpose()) * 0.5;
    Ok(SandwichCovariance {
        j_hat,
        sigma_hat,
        v_hat,
        n: sys.n,
        asymmetry,
    })
}

/// Standard normal quantile (Acklam's rational approximation, relative error below 1.2e-9).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.38357751867269e2,
        -3.066479806614716e1,
        2.506628277459239e0,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838e0,
        -2.549732539343734e0,
        4.374664141464968e0,
        2.938163982698783e0,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996e0,
        3.754408661907416e0,
    ];
    const P_LOW: f64 = 0.02425;
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// `xᵀ V x` restricted to the leading `x.len()` coordinates of `v`.
fn quad_form(v: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..x.len() {
        let mut inner = 0.0;
        for j in 0..x.len() {
            inner += v[(i, j)] * x[j];
        }
        total += x[i] * inner;
    }
    total
}

fn dot(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn symmetric_interval(center: f64, variance: f64, n: usize, alpha: f64) -> Interval {
    let z = normal_quantile(1.0 - alpha / 2.0);
    let half = z * (variance.max(0.0) / n.max(1) as f64).sqrt();
    Interval {
        lower: center - half,
        upper: center + half,
    }
}

/// `νᵀθ̂ ± z_{1−α/2} √(νᵀV̂ν / n)`.
pub fn ci_linear(nu: &DVector<f64>, theta_hat: &ThetaVector, cov: &SandwichCovariance, alpha: f64) -> Result<Interval> {
    let theta = theta_hat.stacked();
    if nu.len() != theta.len() || cov.v_hat.nrows() != theta.len() {
        return Err(Error::dim("linear functional", theta.len(), nu.len()));
    }
    Ok(symmetric_interval(dot(nu, &theta), quad_form(&cov.v_hat, nu), cov.n, alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub tau_hat: f64,
    pub gamma_hat: f64,
    pub mu_hat: f64,
    pub ci: Interval,
    pub t1: Vec<f64>,
    pub t0: Vec<f64>,
    pub alpha: f64,
}

/// Welford mean of `Q_i = φ(t1, S_0^i) − φ(t0, S_0^i)` and of `(Qᵀθ)` with its variance.
struct EffectMoments {
    q_bar: DVector<f64>,
    var: f64,
    count: usize,
}

fn effect_moments(theta0: &DVector<f64>, units: &[&UnitTrajectory], map: &FeatureMapSpec, t1: &DVector<f64>, t0: &DVector<f64>) -> Result<EffectMoments> {
    if units.is_empty() {
        return Err(Error::NoExperimentalUnits);
    }
    let d = map.output_dim();
    if theta0.len() != d {
        return Err(Error::dim("effect parameter", d, theta0.len()));
    }
    let mut q_bar = DVector::zeros(d);
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, u) in units.iter().enumerate() {
        let q = map.eval(t1, &u.s0)? - map.eval(t0, &u.s0)?;
        let kf = (k + 1) as f64;
        for j in 0..d {
            q_bar[j] += (q[j] - q_bar[j]) / kf;
        }
        let x = dot(&q, theta0);
        let delta = x - mean;
        mean += delta / kf;
        m2 += delta * (x - mean);
    }
    Ok(EffectMoments {
        q_bar,
        var: m2 / units.len() as f64,
        count: units.len(),
    })
}

/// `τ̂(t1, t0) = θ̂_0ᵀ Ē_e[Q]`.
pub fn effect_estimate(theta0: &DVector<f64>, units: &[&UnitTrajectory], map: &FeatureMapSpec, t1: &DVector<f64>, t0: &DVector<f64>) -> Result<f64> {
    let mom = effect_moments(theta0, units, map, t1, t0)?;
    Ok(dot(theta0, &mom.q_bar))
}

/// Effect estimate with the interval `τ̂ ± z √((γ̂ + μ̂)/n)`.
pub fn effect_ci(
    theta0: &DVector<f64>,
    units: &[&UnitTrajectory],
    map: &FeatureMapSpec,
    t1: &DVector<f64>,
    t0: &DVector<f64>,
    cov: &SandwichCovariance,
    alpha: f64,
) -> Result<EffectEstimate> {
    let mom = effect_moments(theta0, units, map, t1, t0)?;
    let tau_hat = dot(theta0, &mom.q_bar);
    let gamma_hat = (cov.n as f64 / mom.count as f64) * mom.var;
    let mu_hat = quad_form(&cov.v_hat, &mom.q_bar).max(0.0);
    Ok(EffectEstimate {
        tau_hat,
        gamma_hat,
        mu_hat,
        ci: symmetric_interval(tau_hat, gamma_hat + mu_hat, cov.n, alpha),
        t1: t1.iter().copied().collect(),
        t0: t0.iter().copied().collect(),
        alpha,
    })
}

/// Interval for each coordinate of θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCi {
    pub block: usize,
    pub index: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub ci: Interval,
}

pub fn coordinate_cis(theta_hat: &ThetaVector, cov: &SandwichCovariance, alpha: f64) -> Vec<CoordinateCi> {
    let total = theta_hat.stacked().len();
    let mut out = Vec::with_capacity(total);
    let mut flat = 0;
    for (b, block) in theta_hat.blocks.iter().enumerate() {
        for (index, &estimate) in block.iter().enumerate() {
            let mut nu = DVector::zeros(total);
            nu[flat] = 1.0;
            let ci = ci_linear(&nu, theta_hat, cov, alpha).expect("dimensions agree by construction");
            out.push(CoordinateCi {
                block: b,
                index,
                estimate,
                std_error: (cov.v_hat[(flat, flat)].max(0.0) / cov.n.max(1) as f64).sqrt(),
                ci,
            });
            flat += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub min_singular_values: Vec<f64>,
    pub clipped_probabilities: usize,
    pub n_experimental: usize,
    pub n_observational: usize,
    pub v_asymmetry: f64,
    /// Plug-in closed-form blip sums `θ_{o,t}`, when computed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_form_theta_o: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub theta: ThetaVector,
    pub v_hat: Vec<Vec<f64>>,
    pub n: usize,
    pub alpha: f64,
    pub coordinate_cis: Vec<CoordinateCi>,
    pub effect: Option<EffectEstimate>,
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    pub fn theta0(&self) -> DVector<f64> {
        self.theta.theta0()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}
