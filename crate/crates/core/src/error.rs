use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource limit: {what} requires N <= {limit}, got N = {requested}")]
    ResourceLimit {
        what: &'static str,
        limit: usize,
        requested: usize,
    },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("degenerate measurement outcome k = {k} (probability {probability:e})")]
    DegenerateOutcome { k: usize, probability: f64 },

    #[error("search failure: {0}")]
    SearchFailure(String),

    #[error("fit failure: {0}")]
    FitFailure(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for the failures a caller should report as numerical (search or
    /// fit) rather than as bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SearchFailure(_)
                | Error::FitFailure(_)
                | Error::InvalidState(_)
                | Error::DegenerateOutcome { .. }
        )
    }
}
