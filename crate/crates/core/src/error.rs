use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("iteration diverged at step {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    /// The threshold multiplier does not exceed the uniqueness bound of the
    /// state-evolution fixed point.
    #[error(
        "alpha = {alpha} does not exceed alpha_min = {alpha_min}; fixed point may not be unique"
    )]
    UniquenessNotGuaranteed { alpha: f64, alpha_min: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
