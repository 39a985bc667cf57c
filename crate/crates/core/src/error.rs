use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid patch layout: {0}")]
    InvalidLayout(String),

    #[error("invalid quadrature weights: {0}")]
    InvalidWeights(String),

    #[error("mode cutoff {kmax} exceeds the Nyquist limit {limit} of a {size}-point axis")]
    ModesExceedNyquist { kmax: usize, limit: usize, size: usize },

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value encountered in {stage}")]
    NonFinite { stage: String },

    #[error("reference norm is zero; relative error undefined")]
    ZeroNorm,

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("stability violation: {0}")]
    Unstable(String),

    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
