use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::data_model::{FeatureMaps, PanelDataset, Setting};
use crate::error::{Error, Result};
use crate::nuisance::{fit_regression, period_feature, LearnerConfig, NuisanceRole};

/// Plug-in blip estimates `θ_{t,j}` and their sums `θ_{o,t} = Σ_{j≥t} θ_{t,j}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlipEstimates {
    pub theta: BTreeMap<(usize, usize), DVector<f64>>,
    pub sums: BTreeMap<usize, DVector<f64>>,
}

/// Recursive closed form on the observational units, for
/// `from_period ≤ t ≤ j ≤ M`, computed from `t = j` downwards:
/// `θ_{t,j} = (Σ φ̃_t φ̃_tᵀ)⁻¹ Σ φ̃_t (Y_j − Σ_{t<τ≤j} θ_{τ,j}ᵀ φ_τ)` with
/// `φ̃_t` the feature centered by a fitted `E[φ_t | S_{t−1}]`.
pub fn recursive_closed_form(data: &PanelDataset, maps: &FeatureMaps, from_period: usize, cfg: &LearnerConfig, seed: u64) -> Result<BlipEstimates> {
    let m = data.dims.m;
    let p = data.dims.p;
    let d = maps.d_o();
    let obs: Vec<_> = data.units.iter().filter(|u| u.setting == Setting::Observational).collect();
    let from_period = from_period.max(1);
    let mut out = BlipEstimates::default();
    if from_period > m {
        return Ok(out);
    }
    if obs.is_empty() {
        return Err(Error::SettingMissing(Setting::Observational));
    }
    let n = obs.len();

    let mut phi: BTreeMap<usize, Vec<DVector<f64>>> = BTreeMap::new();
    let mut centered: BTreeMap<usize, Vec<DVector<f64>>> = BTreeMap::new();
    for t in from_period..=m {
        let rows = obs
            .iter()
            .map(|u| period_feature(&maps.observational, u, t))
            .collect::<Result<Vec<_>>>()?;
        let x = DMatrix::from_fn(n, p, |i, j| obs[i].state(t - 1)[j]);
        let y = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let model = fit_regression(cfg.kind(NuisanceRole::POTauT), &x, &y, cfg, seed ^ t as u64)?;
        let tilde = rows
            .iter()
            .zip(&obs)
            .map(|(r, u)| r - model.predict(u.state(t - 1)))
            .collect();
        centered.insert(t, tilde);
        phi.insert(t, rows);
    }

    for j in from_period..=m {
        for t in (from_period..=j).rev() {
            let tilde = &centered[&t];
            let mut cov = DMatrix::zeros(d, d);
            let mut rhs = DVector::zeros(d);
            for (i, u) in obs.iter().enumerate() {
                let mut target = u.outcome(j)?;
                for tau in (t + 1)..=j {
                    target -= out.theta[&(tau, j)].dot(&phi[&tau][i]);
                }
                cov.ger(1.0, &tilde[i], &tilde[i], 1.0);
                rhs.axpy(target, &tilde[i], 1.0);
            }
            let sv = cov.singular_values();
            if !(sv.min() > 1e-10 * sv.max()) {
                return Err(Error::SingularCovariance { period: t });
            }
            let th = cov.lu().solve(&rhs).ok_or(Error::SingularCovariance { period: t })?;
            out.theta.insert((t, j), th);
        }
    }
    for t in from_period..=m {
        let sum = (t..=m).fold(DVector::zeros(d), |acc, j| acc + &out.theta[&(t, j)]);
        out.sums.insert(t, sum);
    }
    Ok(out)
}
