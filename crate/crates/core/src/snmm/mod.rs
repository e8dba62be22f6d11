//! Orthogonal scores, the stacked moment system and its solution.
//!
//! Every score is affine in θ. A unit contributes terms of the form
//! `(r − Σ_τ θ_τᵀ x_τ) · w` to a single block, so the empirical moment is
//! `a − Gθ` and the estimator is a linear solve. Block `b` holds the
//! parameter of period `b + 1`; terms only reference blocks at or after
//! their own, which makes `G` block upper triangular.

mod closed_form;
mod spec;

pub use closed_form::{recursive_closed_form, BlipEstimates};
pub use spec::{Design, MultiplierIndex, Psi1Reading, Representation, ScoreFamily, ScoreOptions, ScoreSpec};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_model::{cumulative_outcome, FeatureMaps, PanelDataset, UnitTrajectory};
use crate::error::{Error, Result};
use crate::nuisance::{period_feature, predict_nuisances, FoldPair, NuisanceModel, NuisanceSet, NuisanceValues};

/// Stacked parameter `(θ_0; θ_{o,2}; …; θ_{o,M})`, one vector per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub blocks: Vec<Vec<f64>>,
}

impl ThetaVector {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            blocks: dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    pub fn from_blocks(blocks: Vec<DVector<f64>>) -> Self {
        Self {
            blocks: blocks.into_iter().map(|b| b.as_slice().to_vec()).collect(),
        }
    }

    pub fn from_stacked(dims: &[usize], v: &DVector<f64>) -> Self {
        let mut off = 0;
        let blocks = dims
            .iter()
            .map(|&d| {
                let b = v.rows(off, d).iter().copied().collect();
                off += d;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn block(&self, b: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.blocks[b])
    }

    /// Period-1 effect parameter.
    pub fn theta0(&self) -> DVector<f64> {
        self.block(0)
    }

    /// `θ_{o,t}` for `t >= 2`.
    pub fn theta_o(&self, t: usize) -> DVector<f64> {
        self.block(t - 1)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(self.blocks.iter().map(Vec::len).sum(), self.blocks.iter().flatten().copied())
    }
}

/// One affine piece `(response − Σ θ_{block}ᵀ x) · weights` of a score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTerm {
    pub block: usize,
    pub response: f64,
    pub regressors: Vec<(usize, DVector<f64>)>,
    pub weights: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitScore {
    pub unit: usize,
    pub terms: Vec<ScoreTerm>,
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .scan(0, |acc, &d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect()
}

impl UnitScore {
    /// Stacked `ψ(Z; θ, f)`.
    pub fn evaluate(&self, dims: &[usize], theta: &ThetaVector) -> DVector<f64> {
        let off = offsets(dims);
        let mut out = DVector::zeros(dims.iter().sum());
        for term in &self.terms {
            let mut resid = term.response;
            for (b, x) in &term.regressors {
                resid -= x.iter().zip(&theta.blocks[*b]).map(|(a, c)| a * c).sum::<f64>();
            }
            out.rows_mut(off[term.block], dims[term.block]).axpy(resid, &term.weights, 1.0);
        }
        out
    }

    /// Add this unit's `(a_i, G_i)` into the accumulators.
    fn accumulate(&self, off: &[usize], a: &mut DVector<f64>, g: &mut DMatrix<f64>) {
        for term in &self.terms {
            let r0 = off[term.block];
            let d = term.weights.len();
            a.rows_mut(r0, d).axpy(term.response, &term.weights, 1.0);
            for (b, x) in &term.regressors {
                let mut view = g.view_mut((r0, off[*b]), (d, x.len()));
                view.ger(1.0, &term.weights, x, 1.0);
            }
        }
    }
}

/// Build the affine score pieces of one unit from its nuisance values.
pub fn unit_score(unit_index: usize, unit: &UnitTrajectory, values: &NuisanceValues, spec: &ScoreSpec, maps: &FeatureMaps) -> Result<UnitScore> {
    let m = spec.m;
    let mut terms = Vec::new();
    let last = if spec.dynamic() { m } else { 1 };
    let dynamic_t = || 2..=last;

    if let Some(sv) = &values.short {
        let phi1 = period_feature(spec.first_map(maps), unit, 1)?;
        let w = &phi1 - &sv.p_e1;
        let mut regressors = vec![(0, w.clone())];
        for (i, t) in dynamic_t().enumerate() {
            regressors.push((t - 1, &sv.g_t[i] - &sv.p_et[i]));
        }
        let scale = match spec.options.psi1 {
            Psi1Reading::Sum => 1.0,
            Psi1Reading::Doubled => 2.0,
        };
        terms.push(ScoreTerm {
            block: 0,
            response: sv.g - sv.h,
            regressors,
            weights: w * scale,
        });
    }

    if let Some(lv) = &values.long {
        let phi_o = |t: usize| period_feature(&maps.observational, unit, t);
        if let (Some(g), Some(q)) = (lv.g, &lv.q) {
            let mut regressors = Vec::new();
            for (i, t) in dynamic_t().enumerate() {
                regressors.push((t - 1, phi_o(t)? - &lv.g_t[i]));
            }
            terms.push(ScoreTerm {
                block: 0,
                response: cumulative_outcome(unit, 1)? - g,
                regressors,
                weights: q.clone(),
            });
        }
        for (k, t) in spec.long_periods().enumerate() {
            let mut regressors = Vec::new();
            for (j, tau) in (t..=spec.tau_max(t)).enumerate() {
                regressors.push((tau - 1, phi_o(tau)? - &lv.p_o[k][j]));
            }
            let weights = match spec.options.multiplier {
                MultiplierIndex::Diagonal => regressors[0].1.clone(),
                MultiplierIndex::Summed => regressors
                    .iter()
                    .fold(DVector::zeros(maps.d_o()), |acc, (_, x)| acc + x),
            };
            terms.push(ScoreTerm {
                block: t - 1,
                response: cumulative_outcome(unit, t)? - lv.b_o[k],
                regressors,
                weights,
            });
        }
    }
    Ok(UnitScore { unit: unit_index, terms })
}

fn static_spec(design: Design) -> ScoreSpec {
    ScoreSpec {
        family: ScoreFamily::Surrogate {
            dynamic: false,
            repr: Representation::Orthogonal,
        },
        design,
        options: ScoreOptions::default(),
        m: 1,
    }
}

/// Score without dynamic adjustment: `ψ_{e,1}` for short-term units,
/// `q(S_1)(Ȳ − g(S_1))` for observational ones.
pub fn static_score(unit: &UnitTrajectory, theta0: &DVector<f64>, values: &NuisanceValues, maps: &FeatureMaps, design: Design) -> Result<DVector<f64>> {
    let mut spec = static_spec(design);
    spec.m = unit.horizon().max(1);
    let score = unit_score(0, unit, values, &spec, maps)?;
    Ok(score.evaluate(&[theta0.len()], &ThetaVector::from_blocks(vec![theta0.clone()])))
}

/// Stacked dynamic score vector `(ψ_1; …; ψ_M)`.
pub fn dynamic_scores(unit: &UnitTrajectory, theta: &ThetaVector, values: &NuisanceValues, spec: &ScoreSpec, maps: &FeatureMaps) -> Result<DVector<f64>> {
    let score = unit_score(0, unit, values, spec, maps)?;
    Ok(score.evaluate(&spec.block_dims(maps), theta))
}

/// `Ȳ − Σ_{t≥2} θ_{o,t}ᵀ Φ_{o,t}`; `theta_o[i]` is `θ_{o,i+2}`.
pub fn adjusted_outcome(traj: &UnitTrajectory, theta_o: &[DVector<f64>], maps: &FeatureMaps) -> Result<f64> {
    let mut y = cumulative_outcome(traj, 1)?;
    for (i, th) in theta_o.iter().enumerate() {
        y -= th.dot(&period_feature(&maps.observational, traj, i + 2)?);
    }
    Ok(y)
}

/// Accumulated empirical moment `Σ_i ψ_i(θ) = a − Gθ`.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    pub dims: Vec<usize>,
    pub g: DMatrix<f64>,
    pub a: DVector<f64>,
    pub n: usize,
    pub units: Vec<UnitScore>,
}

impl MomentSystem {
    /// Sum unit contributions in the given order; `n` is the normalizing count.
    pub fn from_scores(dims: Vec<usize>, units: Vec<UnitScore>, n: usize) -> Self {
        let total: usize = dims.iter().sum();
        let off = offsets(&dims);
        let mut a = DVector::zeros(total);
        let mut g = DMatrix::zeros(total, total);
        for u in &units {
            u.accumulate(&off, &mut a, &mut g);
        }
        Self { dims, g, a, n, units }
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn offsets(&self) -> Vec<usize> {
        offsets(&self.dims)
    }

    pub fn diagonal_block(&self, b: usize) -> DMatrix<f64> {
        let off = self.offsets();
        self.g.view((off[b], off[b]), (self.dims[b], self.dims[b])).into_owned()
    }

    /// Smallest singular value of each diagonal block.
    pub fn block_min_singular_values(&self) -> Vec<f64> {
        (0..self.dims.len())
            .map(|b| self.diagonal_block(b).singular_values().min())
            .collect()
    }

    /// Mean score `(a − Gθ)/n`.
    pub fn mean_moment(&self, theta: &ThetaVector) -> DVector<f64> {
        (&self.a - &self.g * theta.stacked()) / self.n as f64
    }
}

/// Relative singular-value floor for the overlap guard.
pub const BLOCK_RCOND: f64 = 1e-8;

/// Solve `Gθ = a` by block back-substitution, last block first.
pub fn solve_theta(sys: &MomentSystem) -> Result<ThetaVector> {
    let off = sys.offsets();
    let nb = sys.dims.len();
    let mut theta: Vec<DVector<f64>> = sys.dims.iter().map(|&d| DVector::zeros(d)).collect();
    for b in (0..nb).rev() {
        let d = sys.dims[b];
        let mut rhs = sys.a.rows(off[b], d).into_owned();
        for c in (b + 1)..nb {
            let gbc = sys.g.view((off[b], off[c]), (d, sys.dims[c]));
            rhs -= gbc * &theta[c];
        }
        let block = sys.diagonal_block(b);
        let min_sv = block.singular_values().min();
        if !(min_sv > BLOCK_RCOND * block.norm()) {
            return Err(Error::SingularBlock {
                period: b + 1,
                min_singular: min_sv,
            });
        }
        theta[b] = block.lu().solve(&rhs).ok_or(Error::SingularBlock {
            period: b + 1,
            min_singular: min_sv,
        })?;
    }
    Ok(ThetaVector::from_blocks(theta))
}

/// Dense LU solve of the whole system, for cross-checking.
pub fn solve_dense(sys: &MomentSystem) -> Result<ThetaVector> {
    let v = sys.g.clone().lu().solve(&sys.a).ok_or(Error::SingularJacobian)?;
    Ok(ThetaVector::from_stacked(&sys.dims, &v))
}

/// Score every eligible unit under one nuisance model (no cross-fitting).
pub fn assemble_with_model(data: &PanelDataset, units: &[usize], model: &dyn NuisanceModel, spec: &ScoreSpec, maps: &FeatureMaps) -> Result<MomentSystem> {
    let scores = units
        .iter()
        .map(|&i| {
            let u = &data.units[i];
            unit_score(i, u, &predict_nuisances(model, u, spec)?, spec, maps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MomentSystem::from_scores(spec.block_dims(maps), scores, units.len()))
}

/// Cross-fitted system: each unit is scored with the set trained on the other half.
pub fn assemble_system(data: &PanelDataset, folds: &FoldPair, sets: &[NuisanceSet; 2], spec: &ScoreSpec, maps: &FeatureMaps) -> Result<MomentSystem> {
    let mut order: Vec<usize> = folds.halves.concat();
    order.sort_unstable();
    let scores = order
        .iter()
        .map(|&i| {
            let u = &data.units[i];
            let own = folds.fold(i).expect("unit belongs to a half");
            let set = &sets[usize::from(1 - own)];
            if set.fold == own {
                return Err(Error::CrossFitViolation { unit: u.unit_id.clone() });
            }
            unit_score(i, u, &predict_nuisances(set, u, spec)?, spec, maps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MomentSystem::from_scores(spec.block_dims(maps), scores, order.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{PeriodRecord, Setting};
    use crate::nuisance::{LongTermValues, ShortTermValues};

    fn unit(setting: Setting, treatments: &[f64], states: &[f64], outcomes: &[Option<f64>]) -> UnitTrajectory {
        UnitTrajectory {
            unit_id: "u".into(),
            setting,
            s0: DVector::from_element(1, states[0]),
            periods: treatments
                .iter()
                .enumerate()
                .map(|(i, &t)| PeriodRecord {
                    t: i + 1,
                    treatment: DVector::from_element(1, t),
                    surrogates: DVector::from_element(1, states[i + 1]),
                    outcome: outcomes[i],
                })
                .collect(),
        }
    }

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn dyn_spec(m: usize) -> ScoreSpec {
        ScoreSpec {
            family: ScoreFamily::Surrogate {
                dynamic: true,
                repr: Representation::Orthogonal,
            },
            design: Design::CrossDataset,
            options: ScoreOptions::default(),
            m,
        }
    }

    #[test]
    fn static_score_zero_cases() {
        let maps = FeatureMaps::identity(1, 1, 1);
        let e = unit(Setting::Experimental, &[2.0], &[0.5, 1.0], &[None]);
        let vals = NuisanceValues {
            short: Some(ShortTermValues {
                g: 3.0,
                h: 3.0,
                p_e1: v(2.0),
                g_t: vec![],
                p_et: vec![],
            }),
            long: None,
        };
        let s = static_score(&e, &v(7.0), &vals, &maps, Design::CrossDataset).unwrap();
        assert_eq!(s, v(0.0));

        let o = unit(Setting::Observational, &[1.0], &[0.0, 1.0], &[Some(4.0)]);
        let vals = NuisanceValues {
            short: None,
            long: Some(LongTermValues {
                g: Some(4.0),
                q: Some(v(1.3)),
                g_t: vec![],
                first_t: 1,
                b_o: vec![],
                p_o: vec![],
                clipped: false,
            }),
        };
        let s = static_score(&o, &v(7.0), &vals, &maps, Design::CrossDataset).unwrap();
        assert_eq!(s, v(0.0));
    }

    /// Two hand-built units, M = 2, identity maps: every entry of (a, G)
    /// expanded by hand from the score formulas.
    #[test]
    fn hand_expanded_system() {
        let maps = FeatureMaps::identity(1, 1, 1);
        let spec = dyn_spec(2);
        let e = unit(Setting::Experimental, &[2.0], &[0.5, 1.0], &[None]);
        let o = unit(Setting::Observational, &[1.0, 3.0], &[0.0, 1.0, 2.0], &[Some(1.0), Some(2.0)]);
        let ev = NuisanceValues {
            short: Some(ShortTermValues {
                g: 4.0,
                h: 1.0,
                p_e1: v(0.5),
                g_t: vec![v(2.0)],
                p_et: vec![v(1.5)],
            }),
            long: None,
        };
        let ov = NuisanceValues {
            short: None,
            long: Some(LongTermValues {
                g: Some(2.5),
                q: Some(v(0.4)),
                g_t: vec![v(1.0)],
                first_t: 2,
                b_o: vec![1.5],
                p_o: vec![vec![v(2.25)]],
                clipped: false,
            }),
        };
        let scores = vec![
            unit_score(0, &e, &ev, &spec, &maps).unwrap(),
            unit_score(1, &o, &ov, &spec, &maps).unwrap(),
        ];
        let sys = MomentSystem::from_scores(vec![1, 1], scores, 2);
        // e: w = 2 − 0.5 = 1.5; r = 4 − 1 = 3; x_2 = 2 − 1.5 = 0.5.
        // o, ψ_{o,1}: q = 0.4, r = 3 − 2.5 = 0.5, x_2 = 3 − 1 = 2.
        // o, ψ_2: w = 3 − 2.25 = 0.75, r = 2 − 1.5 = 0.5.
        let a = DVector::from_vec(vec![1.5 * 3.0 + 0.4 * 0.5, 0.75 * 0.5]);
        let g = DMatrix::from_row_slice(2, 2, &[1.5 * 1.5, 1.5 * 0.5 + 0.4 * 2.0, 0.0, 0.75 * 0.75]);
        assert!((sys.a - a).amax() < 1e-15);
        assert!((sys.g.clone() - g).amax() < 1e-15);
        assert_eq!(sys.g[(1, 0)], 0.0);
    }

    #[test]
    fn theta_o_zero_reduces_to_static() {
        let maps = FeatureMaps::identity(1, 1, 1);
        let o = unit(Setting::Observational, &[1.0, 3.0], &[0.0, 1.0, 2.0], &[Some(1.0), Some(2.0)]);
        let vals = NuisanceValues {
            short: None,
            long: Some(LongTermValues {
                g: Some(2.5),
                q: Some(v(0.4)),
                g_t: vec![v(1.0)],
                first_t: 2,
                b_o: vec![1.5],
                p_o: vec![vec![v(2.25)]],
                clipped: false,
            }),
        };
        let theta = ThetaVector::from_blocks(vec![v(1.7), v(0.0)]);
        let d = dynamic_scores(&o, &theta, &vals, &dyn_spec(2), &maps).unwrap();
        let s = static_score(&o, &v(1.7), &vals, &maps, Design::CrossDataset).unwrap();
        assert_eq!(d[0], s[0]);
    }

    #[test]
    fn identity_system_solves_to_rhs() {
        let mut sys = MomentSystem::from_scores(vec![1, 2], vec![], 1);
        sys.g = DMatrix::identity(3, 3);
        sys.a = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let th = solve_theta(&sys).unwrap();
        assert_eq!(th.stacked(), sys.a);
        // Rank-one second block: the guard is relative to the block's own norm.
        sys.g[(1, 2)] = 1.0;
        sys.g[(2, 1)] = 1.0;
        sys.g[(2, 2)] = 1.0 + 1e-12;
        assert!(matches!(solve_theta(&sys), Err(Error::SingularBlock { period: 2, .. })));
    }

    #[test]
    fn adjusted_outcome_cases() {
        let maps = FeatureMaps::identity(1, 1, 1);
        let o = unit(Setting::Observational, &[1.0, 3.0, 0.0], &[0.0, 1.0, 2.0, 1.0], &[Some(1.0), Some(2.0), Some(3.0)]);
        assert_eq!(adjusted_outcome(&o, &[v(0.0), v(0.0)], &maps).unwrap(), 6.0);
        assert_eq!(adjusted_outcome(&o, &[v(0.5), v(9.0)], &maps).unwrap(), 6.0 - 1.5);
        let quiet = unit(Setting::Observational, &[1.0, 0.0], &[0.0, 1.0, 2.0], &[Some(1.0), Some(2.0)]);
        assert_eq!(adjusted_outcome(&quiet, &[v(4.0)], &maps).unwrap(), 3.0);
    }
}
