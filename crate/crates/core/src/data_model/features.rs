use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Setting;
use crate::error::{Error, Result};

/// Blip feature map `φ(τ, s)`; every variant is linear in `τ`, so `φ(0, s) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMapKind {
    Identity,
    /// `φ(τ, s) = W τ`, rows of `W` given as `coefficients`.
    Linear { coefficients: Vec<Vec<f64>> },
    /// `φ(τ, s) = (τ, τ_i s_j for (i, j) in pairs)`.
    TreatmentStateInteraction { pairs: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapSpec {
    #[serde(flatten)]
    pub kind: FeatureMapKind,
    pub treatment_dim: usize,
    pub state_dim: usize,
}

impl FeatureMapSpec {
    pub fn identity(k: usize, p: usize) -> Self {
        Self {
            kind: FeatureMapKind::Identity,
            treatment_dim: k,
            state_dim: p,
        }
    }

    pub fn linear(w: &DMatrix<f64>, p: usize) -> Self {
        let coefficients = (0..w.nrows())
            .map(|r| w.row(r).iter().copied().collect())
            .collect();
        Self {
            kind: FeatureMapKind::Linear { coefficients },
            treatment_dim: w.ncols(),
            state_dim: p,
        }
    }

    pub fn interaction(k: usize, p: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let spec = Self {
            kind: FeatureMapKind::TreatmentStateInteraction { pairs },
            treatment_dim: k,
            state_dim: p,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            FeatureMapKind::Identity => Ok(()),
            FeatureMapKind::Linear { coefficients } => {
                if coefficients.is_empty() {
                    return Err(Error::InvalidConfig("linear feature map has no rows".into()));
                }
                for row in coefficients {
                    if row.len() != self.treatment_dim {
                        return Err(Error::dim("linear feature map row", self.treatment_dim, row.len()));
                    }
                }
                Ok(())
            }
            FeatureMapKind::TreatmentStateInteraction { pairs } => {
                for &(i, j) in pairs {
                    if i >= self.treatment_dim || j >= self.state_dim {
                        return Err(Error::InvalidConfig(format!(
                            "interaction pair ({i}, {j}) out of range"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.kind {
            FeatureMapKind::Identity => self.treatment_dim,
            FeatureMapKind::Linear { coefficients } => coefficients.len(),
            FeatureMapKind::TreatmentStateInteraction { pairs } => self.treatment_dim + pairs.len(),
        }
    }

    pub fn eval(&self, tau: &DVector<f64>, s: &DVector<f64>) -> Result<DVector<f64>> {
        if tau.len() != self.treatment_dim {
            return Err(Error::dim("feature map treatment", self.treatment_dim, tau.len()));
        }
        if s.len() != self.state_dim {
            return Err(Error::dim("feature map state", self.state_dim, s.len()));
        }
        Ok(match &self.kind {
            FeatureMapKind::Identity => tau.clone(),
            FeatureMapKind::Linear { coefficients } => DVector::from_iterator(
                coefficients.len(),
                coefficients
                    .iter()
                    .map(|row| row.iter().zip(tau.iter()).map(|(w, t)| w * t).sum()),
            ),
            FeatureMapKind::TreatmentStateInteraction { pairs } => {
                let mut out = DVector::zeros(self.output_dim());
                out.rows_mut(0, tau.len()).copy_from(tau);
                for (r, &(i, j)) in pairs.iter().enumerate() {
                    out[tau.len() + r] = tau[i] * s[j];
                }
                out
            }
        })
    }
}

/// The pair of maps used by an estimator: `φ_{e,1}` and `φ_{o,t}` (shared across `t`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMaps {
    pub experimental: FeatureMapSpec,
    pub observational: FeatureMapSpec,
}

impl FeatureMaps {
    pub fn identity(k_e: usize, k_o: usize, p: usize) -> Self {
        Self {
            experimental: FeatureMapSpec::identity(k_e, p),
            observational: FeatureMapSpec::identity(k_o, p),
        }
    }

    pub fn for_setting(&self, setting: Setting) -> &FeatureMapSpec {
        match setting {
            Setting::Experimental => &self.experimental,
            Setting::Observational => &self.observational,
        }
    }

    pub fn d_e(&self) -> usize {
        self.experimental.output_dim()
    }

    pub fn d_o(&self) -> usize {
        self.observational.output_dim()
    }
}
