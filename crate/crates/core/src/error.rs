//! Crate-wide error type.

use thiserror::Error;

/// Errors reported by problem construction, design materialization,
/// estimation, and experiment orchestration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The supplied eigenbasis is not orthogonal within tolerance.
    #[error("basis is not orthogonal: ||V^T V - I||_F = {deviation:.3e} exceeds {tolerance:.1e}")]
    NonOrthogonalBasis { deviation: f64, tolerance: f64 },

    #[error("spectrum entry {index} is negative ({value})")]
    NegativeEigenvalue { index: usize, value: f64 },

    #[error("noise variance must be positive, got {0}")]
    NonPositiveNoise(f64),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("unknown example '{0}'")]
    UnknownExample(String),

    /// A design matrix with n rows cannot reproduce a covariance of higher rank.
    #[error("covariance rank {rank} exceeds sample count {n}")]
    RankExceedsSamples { rank: usize, n: usize },

    #[error("regularization strength must be non-negative, got {0}")]
    NegativeMu(f64),

    #[error("need at least {needed} points for a rate fit, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("rate fit requires positive excess risk, found {0}")]
    NonPositiveExcess(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
