use thiserror::Error;

/// Errors surfaced by the numeric and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("eigensolver did not converge within {0} sweeps")]
    NoConvergence(usize),

    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no parameter configuration within tolerance of target {0}")]
    NoMatch(usize),

    #[error("numerical divergence: {0}")]
    Diverged(String),

    #[error("environment {0} stepped while done and not reset")]
    SteppedDoneEnv(usize),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
