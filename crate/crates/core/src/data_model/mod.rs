//! Panel data: per-unit trajectories tagged with the setting they come from.
//!
//! A trajectory is `S_0, (T_1, S_1, Y_1), ..., (T_M, S_M, Y_M)`. Observational
//! (long-term) units carry all `M` periods with outcomes; experimental
//! (short-term) units carry only the first period and may lack an outcome.

mod features;
mod io;

pub use features::{FeatureMapKind, FeatureMapSpec, FeatureMaps};
pub use io::{
    load_panel, load_panel_with_meta, meta_path_for, parse_panel_csv, save_panel, write_panel_csv,
    PanelMetaFile,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "e")]
    Experimental,
    #[serde(rename = "o")]
    Observational,
}

impl Setting {
    pub fn code(self) -> &'static str {
        match self {
            Setting::Experimental => "e",
            Setting::Observational => "o",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "e" => Some(Setting::Experimental),
            "o" => Some(Setting::Observational),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRecord {
    pub t: usize,
    pub treatment: DVector<f64>,
    pub surrogates: DVector<f64>,
    pub outcome: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitTrajectory {
    pub unit_id: String,
    pub setting: Setting,
    pub s0: DVector<f64>,
    pub periods: Vec<PeriodRecord>,
}

impl UnitTrajectory {
    pub fn horizon(&self) -> usize {
        self.periods.len()
    }

    /// Surrogate state `S_t`; `t = 0` is the initial state.
    pub fn state(&self, t: usize) -> &DVector<f64> {
        if t == 0 {
            &self.s0
        } else {
            &self.periods[t - 1].surrogates
        }
    }

    /// Treatment `T_t` for `t >= 1`.
    pub fn treatment(&self, t: usize) -> &DVector<f64> {
        &self.periods[t - 1].treatment
    }

    pub fn outcome(&self, t: usize) -> Result<f64> {
        self.periods
            .get(t.wrapping_sub(1))
            .and_then(|p| p.outcome)
            .ok_or_else(|| Error::MissingOutcome {
                unit: self.unit_id.clone(),
                period: t,
            })
    }
}

/// `Ȳ_{from_t} = Σ_{j=from_t}^{M} Y_j`.
pub fn cumulative_outcome(traj: &UnitTrajectory, from_t: usize) -> Result<f64> {
    let from_t = from_t.max(1);
    let mut total = 0.0;
    for t in from_t..=traj.horizon() {
        total += traj.outcome(t)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelDims {
    pub p: usize,
    pub k_e: usize,
    pub k_o: usize,
    pub m: usize,
}

impl PanelDims {
    pub fn k(&self, setting: Setting) -> usize {
        match setting {
            Setting::Experimental => self.k_e,
            Setting::Observational => self.k_o,
        }
    }

    /// Number of treatment columns in the long-format file.
    pub fn k_columns(&self) -> usize {
        self.k_e.max(self.k_o)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelMeta {
    pub seed: Option<u64>,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub units: Vec<UnitTrajectory>,
    pub dims: PanelDims,
    pub meta: PanelMeta,
}

impl PanelDataset {
    pub fn new(units: Vec<UnitTrajectory>, dims: PanelDims, meta: PanelMeta) -> Result<Self> {
        for unit in &units {
            validate_unit(unit, &dims)?;
        }
        Ok(Self { units, dims, meta })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn count(&self, setting: Setting) -> usize {
        self.units.iter().filter(|u| u.setting == setting).count()
    }

    pub fn indices_of(&self, setting: Setting) -> Vec<usize> {
        self.units
            .iter()
            .enumerate()
            .filter(|(_, u)| u.setting == setting)
            .map(|(i, _)| i)
            .collect()
    }

    /// Keep only units of one setting.
    pub fn restrict(&self, setting: Setting) -> PanelDataset {
        PanelDataset {
            units: self
                .units
                .iter()
                .filter(|u| u.setting == setting)
                .cloned()
                .collect(),
            dims: self.dims,
            meta: self.meta.clone(),
        }
    }

    /// Concatenate two panels with identical dimensions.
    pub fn concat(&self, other: &PanelDataset) -> Result<PanelDataset> {
        if self.dims != other.dims {
            return Err(Error::InvalidConfig(
                "cannot concatenate panels with different dimensions".into(),
            ));
        }
        let mut units = self.units.clone();
        units.extend(other.units.iter().cloned());
        Ok(PanelDataset {
            units,
            dims: self.dims,
            meta: self.meta.clone(),
        })
    }
}

fn validate_unit(unit: &UnitTrajectory, dims: &PanelDims) -> Result<()> {
    let ctx = |what: &str| format!("unit {} {}", unit.unit_id, what);
    if unit.s0.len() != dims.p {
        return Err(Error::dim(ctx("S_0"), dims.p, unit.s0.len()));
    }
    let k = dims.k(unit.setting);
    for (idx, rec) in unit.periods.iter().enumerate() {
        if rec.t != idx + 1 {
            return Err(if rec.t <= idx {
                Error::DuplicatePeriod {
                    unit: unit.unit_id.clone(),
                    period: rec.t,
                }
            } else {
                Error::PeriodGap {
                    unit: unit.unit_id.clone(),
                    expected: idx + 1,
                    found: rec.t,
                }
            });
        }
        if rec.surrogates.len() != dims.p {
            return Err(Error::dim(ctx("surrogates"), dims.p, rec.surrogates.len()));
        }
        if rec.treatment.len() != k {
            return Err(Error::dim(ctx("treatment"), k, rec.treatment.len()));
        }
    }
    match unit.setting {
        Setting::Observational => {
            if unit.periods.len() != dims.m {
                return Err(Error::InvalidTrajectory {
                    unit: unit.unit_id.clone(),
                    reason: format!(
                        "observational unit has {} periods, expected {}",
                        unit.periods.len(),
                        dims.m
                    ),
                });
            }
            if let Some(rec) = unit.periods.iter().find(|r| r.outcome.is_none()) {
                return Err(Error::MissingOutcome {
                    unit: unit.unit_id.clone(),
                    period: rec.t,
                });
            }
        }
        Setting::Experimental => {
            if unit.periods.len() != 1 {
                return Err(Error::InvalidTrajectory {
                    unit: unit.unit_id.clone(),
                    reason: format!(
                        "experimental unit has {} periods, expected 1",
                        unit.periods.len()
                    ),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs_unit(outcomes: &[f64]) -> UnitTrajectory {
        UnitTrajectory {
            unit_id: "u".into(),
            setting: Setting::Observational,
            s0: DVector::zeros(1),
            periods: outcomes
                .iter()
                .enumerate()
                .map(|(i, y)| PeriodRecord {
                    t: i + 1,
                    treatment: DVector::zeros(1),
                    surrogates: DVector::zeros(1),
                    outcome: Some(*y),
                })
                .collect(),
        }
    }

    #[test]
    fn cumulative_outcome_sums_tail() {
        let u = obs_unit(&[1.0, 2.0, 3.0]);
        assert_eq!(cumulative_outcome(&u, 1).unwrap(), 6.0);
        assert_eq!(cumulative_outcome(&u, 3).unwrap(), 3.0);
        assert_eq!(cumulative_outcome(&obs_unit(&[0.0; 3]), 1).unwrap(), 0.0);
    }

    #[test]
    fn cumulative_outcome_telescopes() {
        let u = obs_unit(&[0.3, -1.25, 4.0, 2.5]);
        for t in 1..4 {
            let d = cumulative_outcome(&u, t).unwrap() - cumulative_outcome(&u, t + 1).unwrap();
            assert!((d - u.outcome(t).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_outcome_is_reported() {
        let mut u = obs_unit(&[1.0, 2.0]);
        u.periods[1].outcome = None;
        assert!(matches!(
            cumulative_outcome(&u, 1),
            Err(Error::MissingOutcome { period: 2, .. })
        ));
    }

    #[test]
    fn observational_units_must_be_complete() {
        let dims = PanelDims { p: 1, k_e: 1, k_o: 1, m: 3 };
        let short = obs_unit(&[1.0, 2.0]);
        assert!(PanelDataset::new(vec![short], dims, PanelMeta::default()).is_err());
        let mut gap = obs_unit(&[1.0, 2.0, 3.0]);
        gap.periods[2].t = 4;
        assert!(matches!(
            PanelDataset::new(vec![gap], dims, PanelMeta::default()),
            Err(Error::PeriodGap { .. })
        ));
    }
}
