use thiserror::Error;

use crate::model::BrmaFit;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid study `{id}`: {reason}")]
    InvalidStudy { id: String, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("covariance matrix is not positive definite at the correlation boundary (study `{id}`)")]
    BoundaryDegeneracy { id: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("REML optimizer did not converge after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        last: Box<BrmaFit>,
    },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("degenerate ranking: {0}")]
    DegenerateRanking(String),

    #[error("trim-and-fill did not stabilise within {0} rounds")]
    IterationLimit(usize),

    #[error("within-study correlation unavailable for study `{id}`")]
    CovarianceUnavailable { id: String },

    #[error("information matrix is singular")]
    SingularInformation,

    #[error("simulation: {0}")]
    Simulation(String),
}
