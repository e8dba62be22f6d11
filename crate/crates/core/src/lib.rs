//! Long-term causal effect estimation from short-term experiments and
//! long-term observational panels, using dynamically adjusted surrogates and
//! linear structural nested mean models.

pub mod data_model;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod nuisance;
pub mod rng;
pub mod snmm;

pub use error::{Error, ErrorCategory, Result};
