//! Crate-wide error type.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed inputs: dimension mismatches, non-finite values, bad options.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A quantity left its mathematical domain (e.g. a quantile argument
    /// outside the usable range of the normal inverse c.d.f.).
    #[error("domain error: {0}")]
    Domain(String),

    /// A treatment arm has too few observations in the designated index set.
    #[error("treatment arm {arm} has {count} units in {context}, need at least {needed}")]
    ArmTooSmall {
        arm: u8,
        count: usize,
        needed: usize,
        context: String,
    },

    /// Numerical failure: singular systems, vanishing kernel mass, etc.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
