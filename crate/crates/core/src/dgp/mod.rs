//! Synthetic panels with known effects.

mod analytic;
mod linear;
mod matrix_serde;
mod semi;

pub use analytic::AnalyticNuisances;
pub use linear::{
    counterfactual_oracle, ground_truth_theta, positive_linear_params, random_linear_params, simulate_linear, simulate_path, spectral_radius,
    GroundTruth, Intervention, LinearDgpParams, Path, PolicyKind, SettingParams,
};
pub use semi::{
    perturb_covariance, sample_residual, simulate_semi_synthetic, treatment_autocorrelation, zero_treatment_share,
    CovarianceSpec, LagProfile, LogNormalTail, PerturbedCovariance, ResidualMixture, SemiPath, SemiSynthConfig,
    SemiSynthModel,
};
