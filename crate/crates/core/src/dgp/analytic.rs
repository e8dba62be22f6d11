//! Exact nuisance functions of the linear Gaussian panel.
//!
//! The joint state `x_t = (S_t, T_t)` follows `x_t = F x_{t−1} + w_t` from
//! `x = 0` before burn-in, so every marginal covariance comes from
//! `P_t = F P_{t−1} Fᵀ + W`, and `Cov(x_a, x_b) = F^{a−b} P_b`. All regressions
//! are then linear; the odds of setting membership is a Gaussian density
//! ratio. Identity feature maps only.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::linear::LinearDgpParams;
use crate::data_model::Setting;
use crate::error::{Error, Result};
use crate::nuisance::NuisanceModel;
use crate::snmm::Design;

struct Moments {
    p: usize,
    f: DMatrix<f64>,
    /// `P_t` for `t = 0..=M`, recorded state at index 0.
    marg: Vec<DMatrix<f64>>,
}

impl Moments {
    fn new(params: &LinearDgpParams, setting: Setting) -> Self {
        let sp = params.setting(setting);
        let (p, k) = (params.p, sp.k());
        let f = params.joint_transition(setting);
        let (se2, sz2) = (params.sigma_eps.powi(2), params.sigma_zeta.powi(2));
        let mut w = DMatrix::zeros(p + k, p + k);
        w.view_mut((0, 0), (p, p))
            .copy_from(&(DMatrix::identity(p, p) * se2 + &sp.a * sp.a.transpose() * sz2));
        w.view_mut((0, p), (p, k)).copy_from(&(&sp.a * sz2));
        w.view_mut((p, 0), (k, p)).copy_from(&(sp.a.transpose() * sz2));
        w.view_mut((p, p), (k, k)).copy_from(&(DMatrix::identity(k, k) * sz2));
        let mut cov = DMatrix::zeros(p + k, p + k);
        for _ in 0..params.burn_in {
            cov = &f * &cov * f.transpose() + &w;
        }
        let mut marg = vec![cov.clone()];
        for _ in 0..params.m {
            cov = &f * &cov * f.transpose() + &w;
            marg.push(cov.clone());
        }
        Self { p, f, marg }
    }

    /// `Cov(x_a, x_b)` for `a >= b`.
    fn cross(&self, a: usize, b: usize) -> DMatrix<f64> {
        let mut out = self.marg[b].clone();
        for _ in b..a {
            out = &self.f * out;
        }
        out
    }

    fn s_cov(&self, t: usize) -> DMatrix<f64> {
        self.marg[t].view((0, 0), (self.p, self.p)).into_owned()
    }

    fn s_inv(&self, t: usize) -> Result<DMatrix<f64>> {
        self.s_cov(t).cholesky().map(|c| c.inverse()).ok_or(Error::NotSpd)
    }

    /// Coefficients of `E[S_a | S_b]` (`p × p`).
    fn state_on_state(&self, a: usize, b: usize) -> Result<DMatrix<f64>> {
        Ok(self.cross(a, b).view((0, 0), (self.p, self.p)) * self.s_inv(b)?)
    }

    /// Coefficients of `E[T_a | S_b]` (`k × p`).
    fn treat_on_state(&self, a: usize, b: usize) -> Result<DMatrix<f64>> {
        let c = self.cross(a, b);
        let k = c.nrows() - self.p;
        Ok(c.view((self.p, 0), (k, self.p)) * self.s_inv(b)?)
    }
}

/// Conditional means of the linear DGP in the nuisance interface.
#[derive(Debug, Clone)]
pub struct AnalyticNuisances {
    pub g: DVector<f64>,
    pub g_t: BTreeMap<usize, DMatrix<f64>>,
    pub q_reg: DMatrix<f64>,
    /// Log-odds `a + sᵀ Q s` of short-term membership; `None` fixes the odds at 1.
    pub log_odds: Option<(f64, DMatrix<f64>)>,
    pub h: DVector<f64>,
    pub p_e1: DMatrix<f64>,
    pub p_et: BTreeMap<usize, DMatrix<f64>>,
    pub b_o: BTreeMap<usize, DVector<f64>>,
    pub p_o: BTreeMap<(usize, usize), DMatrix<f64>>,
    pub clip_eps: f64,
}

impl AnalyticNuisances {
    /// `pr_e` is the pooled share of experimental units (ignored for
    /// [`Design::LongTermOnly`], where the odds is 1).
    pub fn new(params: &LinearDgpParams, design: Design, pr_e: f64, clip_eps: f64) -> Result<Self> {
        params.validate()?;
        if params.append_outcome_to_state {
            return Err(Error::InvalidConfig("analytic nuisances need the unaugmented state".into()));
        }
        let m = params.m;
        let o = Moments::new(params, Setting::Observational);
        let short_setting = match design {
            Design::CrossDataset => Setting::Experimental,
            Design::LongTermOnly => Setting::Observational,
        };
        let e = Moments::new(params, short_setting);
        let c = params.c.transpose().column(0).into_owned();

        // g(s) = Σ_j Cᵀ E[S_j | S_1]
        let mut g = DVector::zeros(params.p);
        for j in 1..=m {
            g += o.state_on_state(j, 1)?.transpose() * &c;
        }
        let mut g_t = BTreeMap::new();
        for t in 2..=m {
            g_t.insert(t, o.treat_on_state(t, 1)?);
        }
        let mut b_o = BTreeMap::new();
        let mut p_o = BTreeMap::new();
        for t in 1..=m {
            let mut b = DVector::zeros(params.p);
            for j in t..=m {
                b += o.state_on_state(j, t - 1)?.transpose() * &c;
            }
            b_o.insert(t, b);
            for tau in t..=m {
                p_o.insert((tau, t), o.treat_on_state(tau, t - 1)?);
            }
        }

        let s1_on_s0 = e.state_on_state(1, 0)?;
        let p_e1 = e.treat_on_state(1, 0)?;
        let h = s1_on_s0.transpose() * &g;
        let p_et = g_t.iter().map(|(&t, gt)| (t, gt * &s1_on_s0)).collect();

        // E_e[T_1 − p_e1 S_0 | S_1]
        let p = params.p;
        let c10 = e.cross(1, 0);
        let cov_t1_s1 = e.marg[1].view((p, 0), (c10.nrows() - p, p)).into_owned();
        let cov_s0_s1 = c10.view((0, 0), (p, p)).transpose();
        let q_reg = (cov_t1_s1 - &p_e1 * cov_s0_s1) * e.s_inv(1)?;

        let log_odds = match design {
            Design::LongTermOnly => None,
            Design::CrossDataset => {
                if !(pr_e > 0.0 && pr_e < 1.0) {
                    return Err(Error::InvalidConfig("pooled experimental share must lie in (0, 1)".into()));
                }
                let (se, so) = (e.s_cov(1), o.s_cov(1));
                let log_det = |m: &DMatrix<f64>| -> Result<f64> {
                    let ch = m.clone().cholesky().ok_or(Error::NotSpd)?;
                    Ok(2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
                };
                let quad = (e.s_inv(1)? - o.s_inv(1)?) * -0.5;
                let a = (pr_e / (1.0 - pr_e)).ln() + 0.5 * (log_det(&so)? - log_det(&se)?);
                Some((a, quad))
            }
        };

        Ok(Self {
            g,
            g_t,
            q_reg,
            log_odds,
            h,
            p_e1,
            p_et,
            b_o,
            p_o,
            clip_eps,
        })
    }

    /// Unclipped `Pr(short-term | S_1 = s)`.
    pub fn membership_prob(&self, s1: &DVector<f64>) -> Option<f64> {
        self.log_odds.as_ref().map(|(a, q)| {
            let z = a + s1.dot(&(q * s1));
            1.0 / (1.0 + (-z).exp())
        })
    }
}

impl NuisanceModel for AnalyticNuisances {
    fn g(&self, s1: &DVector<f64>) -> f64 {
        self.g.dot(s1)
    }

    fn g_t(&self, t: usize, s1: &DVector<f64>) -> DVector<f64> {
        &self.g_t[&t] * s1
    }

    fn q(&self, s1: &DVector<f64>) -> (DVector<f64>, bool) {
        let reg = &self.q_reg * s1;
        match self.membership_prob(s1) {
            None => (reg, false),
            Some(pr) => {
                let c = pr.clamp(self.clip_eps, 1.0 - self.clip_eps);
                (reg * (c / (1.0 - c)), c != pr)
            }
        }
    }

    fn h(&self, s0: &DVector<f64>) -> f64 {
        self.h.dot(s0)
    }

    fn p_e1(&self, s0: &DVector<f64>) -> DVector<f64> {
        &self.p_e1 * s0
    }

    fn p_et(&self, t: usize, s0: &DVector<f64>) -> DVector<f64> {
        &self.p_et[&t] * s0
    }

    fn b_o(&self, t: usize, s_prev: &DVector<f64>) -> f64 {
        self.b_o[&t].dot(s_prev)
    }

    fn p_o(&self, tau: usize, t: usize, s_prev: &DVector<f64>) -> DVector<f64> {
        &self.p_o[&(tau, t)] * s_prev
    }
}
