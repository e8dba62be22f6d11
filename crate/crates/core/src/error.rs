use thiserror::Error;

use crate::data_model::Setting;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("unit {unit}: duplicate period {period}")]
    DuplicatePeriod { unit: String, period: usize },

    #[error("unit {unit}: period sequence has a gap (expected {expected}, found {found})")]
    PeriodGap {
        unit: String,
        expected: usize,
        found: usize,
    },

    #[error("unit {unit}: missing outcome at period {period}")]
    MissingOutcome { unit: String, period: usize },

    #[error("unit {unit}: {reason}")]
    InvalidTrajectory { unit: String, reason: String },

    #[error("singular design matrix")]
    SingularDesign,

    #[error("empty regularization grid")]
    EmptyGrid,

    #[error("classification labels contain a single class")]
    SingleClass,

    #[error("too few {setting:?} units: need at least {needed}, found {found}")]
    TooFewUnits {
        setting: Setting,
        needed: usize,
        found: usize,
    },

    #[error("estimator requires {0:?} units but none are present")]
    SettingMissing(Setting),

    #[error("diagonal block for period {period} is numerically singular (min singular value {min_singular:.3e})")]
    SingularBlock { period: usize, min_singular: f64 },

    #[error("moment jacobian is singular")]
    SingularJacobian,

    #[error("conditional feature covariance is singular at period {period}")]
    SingularCovariance { period: usize },

    #[error("no experimental units available for the effect estimate")]
    NoExperimentalUnits,

    #[error("surrogate transition matrix is unstable (spectral radius {spectral_radius:.4} >= 1)")]
    UnstableB { spectral_radius: f64 },

    #[error("joint state transition is unstable (spectral radius {spectral_radius:.4} >= 1)")]
    UnstableProcess { spectral_radius: f64 },

    #[error("lag companion matrix is unstable (spectral radius {spectral_radius:.4} >= 1)")]
    UnstableCompanion { spectral_radius: f64 },

    #[error("dynamic invariance violated: {0} must be shared between settings")]
    InvarianceViolation(&'static str),

    #[error("matrix is not symmetric positive definite")]
    NotSpd,

    #[error("unit {unit} was scored with nuisances trained on its own fold")]
    CrossFitViolation { unit: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            InvalidConfig(_) | InvarianceViolation(_) | EmptyGrid | UnstableB { .. }
            | UnstableProcess { .. } | UnstableCompanion { .. } | Json(_) => ErrorCategory::Config,
            Io(_) | MalformedRow { .. } | DimensionMismatch { .. } | DuplicatePeriod { .. }
            | PeriodGap { .. } | MissingOutcome { .. } | InvalidTrajectory { .. }
            | TooFewUnits { .. } | SettingMissing(_) | NoExperimentalUnits | SingleClass
            | CrossFitViolation { .. } => ErrorCategory::Data,
            SingularDesign | SingularBlock { .. } | SingularJacobian
            | SingularCovariance { .. } | NotSpd => ErrorCategory::Numerical,
        }
    }

    pub(crate) fn dim(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }
}
