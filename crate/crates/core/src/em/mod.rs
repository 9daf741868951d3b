//! Parametric nuisance models for incomplete covariates under a joint
//! Gaussian covariate law with values missing at random.
//!
//! [`fit_saem_logistic`] estimates the propensity model and
//! [`fit_em_regression`] the outcome regression of each arm. Both rely on
//! MAR for consistency, which is why they break down under informative
//! missingness.

mod gaussian;
mod saem;

pub use gaussian::{em_linear_predict, fit_em_gaussian, fit_em_regression, EmOptions, GaussianJointModel};
pub use saem::{fit_saem_logistic, saem_predict, saem_predict_propensity, SaemLogisticModel, SaemOptions};
