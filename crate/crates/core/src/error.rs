use thiserror::Error;

/// Errors produced by the fitting library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid acquisition scheme: {0}")]
    InvalidScheme(String),

    #[error("parameter domain error: {0}")]
    Domain(String),

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("decay curve length {got} does not match scheme length {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("decay curve contains a non-finite value at index {0}")]
    NonFiniteSignal(usize),

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("dictionary is ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),

    #[error("unsupported Sobol dimension {0} (supported: 1..=6)")]
    UnsupportedDimension(usize),

    #[error("degenerate point set: {0}")]
    DegenerateInput(String),

    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),

    #[error("residual became non-finite at iteration {iteration}")]
    NonFiniteResidual { iteration: usize },

    #[error("b-value split at {split} leaves {below} points below and {above} at or above (need >= 2 each)")]
    InsufficientSplit {
        split: f64,
        below: usize,
        above: usize,
    },

    #[error("cross-validation fold cannot be fit: {0}")]
    DegenerateFold(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
