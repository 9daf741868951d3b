//! Average treatment effect estimation from observational data with
//! incomplete covariates.
//!
//! Two estimator families are provided, each in inverse-propensity weighted
//! (IPW) and augmented, doubly robust (AIPW) form:
//!
//! * generalized-propensity methods that model `P(W = 1 | X*)` and
//!   `E[Y | X*, W]` directly on the masked covariates, either parametrically
//!   ([`em`]: SAEM logistic regression plus EM Gaussian regressions) or with
//!   random forests that split on missingness ([`forest`]);
//! * missingness-mechanism methods that first complete the covariates
//!   ([`impute`]: mean, chained equations, soft-thresholded SVD) and then
//!   apply complete-data estimators.
//!
//! [`sim`] reproduces the simulation designs used to compare them and
//! [`inference`] provides bootstrap intervals and the benchmark runner.

pub mod balance;
pub mod data;
pub mod em;
pub mod error;
pub mod estimators;
pub mod forest;
pub mod glm;
pub mod impute;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod seed;
pub mod sim;

pub use data::{
    complete_cases, concat_mask, response_pattern_summary, AteEstimate, CrossFit, EstimatorForm,
    MaskedMatrix, NuisanceEstimates, ObservationalDataset,
};
pub use error::{Error, Result};
pub use estimators::{run_method, MethodFamily, MethodSpec};
pub use sim::{GeneratedScenario, Mechanism, Model, Regime, ScenarioConfig};
