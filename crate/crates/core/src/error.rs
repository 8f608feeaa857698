use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{what}: size {got} exceeds limit {limit}")]
    TooLarge {
        what: &'static str,
        got: usize,
        limit: usize,
    },
    #[error("infeasible parameters: {0}")]
    InfeasibleParams(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("unmodeled realization {0:#b}")]
    UnmodeledRealization(u64),
    #[error("invariant breach: {0}")]
    InvariantBreach(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! breach {
    ($($arg:tt)*) => {
        return Err($crate::error::Error::InvariantBreach(format!($($arg)*)))
    };
}
pub(crate) use breach;
