use thiserror::Error;

/// Failures raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent sizes or parameters (grid too coarse, bad refinement, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A documented precondition of an estimator does not hold for the model.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A trajectory produced a non-finite or exploding state.
    #[error("trajectory diverged at step {step} (|Y| = {norm:e})")]
    Divergence { step: usize, norm: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
