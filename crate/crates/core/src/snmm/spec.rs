use serde::{Deserialize, Serialize};

use crate::data_model::{FeatureMapSpec, FeatureMaps, Setting};

/// Which data play the short-term (period-1 effect) role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Period-1 effect identified from experimental units, dynamics from observational ones.
    CrossDataset,
    /// Observational units only; each unit serves both roles.
    LongTermOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Surrogate-index score plus the observational correction through `q`.
    Orthogonal,
    /// Surrogate-index score only.
    Index,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum ScoreFamily {
    /// Period-1 effect through the (possibly adjusted) surrogate index `g(S_1)`.
    Surrogate { dynamic: bool, repr: Representation },
    /// Residual-on-residual regressions on the realized long-term outcome.
    LongTerm { dynamic: bool },
}

/// How the first block combines its two pieces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psi1Reading {
    /// `ψ_{e,1} + ψ_{o,1}`.
    #[default]
    Sum,
    /// `ψ_{e,1} + ψ_{e,1}` taken literally; drops the observational correction.
    Doubled,
}

/// Multiplier of the period-`t` dynamic block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierIndex {
    /// `Φ_{o,t} − p_{o,t,t}(S_{t−1})`.
    #[default]
    Diagonal,
    /// `Σ_{τ≥t} (Φ_{o,τ} − p_{o,τ,t}(S_{t−1}))`.
    Summed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    pub psi1: Psi1Reading,
    pub multiplier: MultiplierIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSpec {
    pub family: ScoreFamily,
    pub design: Design,
    #[serde(default)]
    pub options: ScoreOptions,
    pub m: usize,
}

impl ScoreSpec {
    pub fn dynamic(&self) -> bool {
        match self.family {
            ScoreFamily::Surrogate { dynamic, .. } | ScoreFamily::LongTerm { dynamic } => dynamic,
        }
    }

    pub fn is_surrogate(&self) -> bool {
        matches!(self.family, ScoreFamily::Surrogate { .. })
    }

    /// Whether the observational correction `ψ_{o,1}` is part of block 0.
    pub fn uses_q(&self) -> bool {
        matches!(
            self.family,
            ScoreFamily::Surrogate {
                repr: Representation::Orthogonal,
                ..
            }
        ) && self.options.psi1 == Psi1Reading::Sum
    }

    /// Whether `q` needs an odds-ratio classifier (only across datasets).
    pub fn uses_odds(&self) -> bool {
        self.uses_q() && self.design == Design::CrossDataset
    }

    /// Number of parameter blocks; block `b` belongs to period `b + 1`.
    pub fn n_blocks(&self) -> usize {
        if self.dynamic() {
            self.m
        } else {
            1
        }
    }

    /// Periods `t` that get a residual-on-residual block `ψ_t`.
    pub fn long_periods(&self) -> std::ops::RangeInclusive<usize> {
        match (self.family, self.dynamic()) {
            (ScoreFamily::LongTerm { .. }, true) => 1..=self.m,
            (ScoreFamily::LongTerm { .. }, false) => 1..=1,
            (ScoreFamily::Surrogate { .. }, true) => 2..=self.m,
            #[allow(clippy::reversed_empty_ranges)]
            (ScoreFamily::Surrogate { .. }, false) => 1..=0,
        }
    }

    /// Last `τ` entering `ψ_t`.
    pub fn tau_max(&self, t: usize) -> usize {
        if self.dynamic() {
            self.m
        } else {
            t
        }
    }

    /// Map for the period-1 feature `Φ_1`.
    pub fn first_map<'a>(&self, maps: &'a FeatureMaps) -> &'a FeatureMapSpec {
        match (self.family, self.design) {
            (ScoreFamily::Surrogate { .. }, Design::CrossDataset) => &maps.experimental,
            _ => &maps.observational,
        }
    }

    pub fn block_dims(&self, maps: &FeatureMaps) -> Vec<usize> {
        let mut dims = vec![self.first_map(maps).output_dim()];
        dims.extend(std::iter::repeat_n(maps.d_o(), self.n_blocks() - 1));
        dims
    }

    /// Setting whose units play the short-term role.
    pub fn short_term_setting(&self) -> Setting {
        match self.design {
            Design::CrossDataset => Setting::Experimental,
            Design::LongTermOnly => Setting::Observational,
        }
    }

    pub fn required_settings(&self) -> Vec<Setting> {
        match (self.family, self.design) {
            (ScoreFamily::Surrogate { .. }, Design::CrossDataset) => {
                vec![Setting::Experimental, Setting::Observational]
            }
            _ => vec![Setting::Observational],
        }
    }
}
