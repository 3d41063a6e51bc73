//! Small-study effect tests for bivariate random-effects meta-analysis.
//!
//! The crate fits the bivariate random-effects model by restricted maximum
//! likelihood ([`reml`]), runs the classical univariate asymmetry tests on
//! each outcome or a combined measure ([`bias`]), the bivariate score test
//! ([`rst`]), and simulates selected meta-analyses to study their operating
//! characteristics ([`sim`]).

pub mod bias;
pub mod error;
pub mod model;
pub mod reml;
pub mod rst;
pub mod sim;
pub mod suite;

pub use error::{Error, Result};
pub use model::{marginal_cov, BrmaFit, BrmaParams, MetaDataset, Observation, Study, OUTCOMES};
pub use reml::{reml_fit, reml_tau2, restricted_loglik, FitOptions};
pub use rst::{rst_test, Normalization, Objective, RstOptions, RstResult};
pub use suite::{run_suite, run_variant, SuiteOptions, TestVariant};
