use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// The call is malformed for the object it was made on (shape mismatch,
    /// stepping a finished episode, ...).
    #[error("usage error: {0}")]
    Usage(String),
    /// No privacy calibration satisfies the required constraints.
    #[error("infeasible calibration: {0}")]
    Infeasible(String),
    /// A quantity assumed bounded by the calibration exceeded its bound.
    #[error("calibration violated: {0}")]
    CalibrationViolation(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
