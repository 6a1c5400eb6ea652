use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure reported by a probability oracle for a single query.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("oracle reported an error: {0}")]
    Shim(String),
    #[error("oracle request timed out")]
    Timeout,
    #[error("malformed oracle response: {0}")]
    Malformed(String),
    #[error("operation not supported by this oracle: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("region count {requested} out of range 1..={max}")]
    RegionCountOutOfRange { requested: usize, max: usize },
    #[error("iteration count must be at least 1")]
    InvalidIterations,
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid targets: {0}")]
    InvalidTargets(String),
    #[error("budget {budget} out of range 1..={regions}")]
    InvalidBudget { budget: usize, regions: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{regions} regions exceed the exhaustive-enumeration limit of {max}")]
    TooManyRegions { regions: usize, max: usize },
    #[error("oracle error: {0}")]
    Oracle(#[from] OracleError),
    #[error("oracle error in greedy round {round} ({failed} of {total} queries failed): {first}")]
    OracleRound {
        round: usize,
        failed: usize,
        total: usize,
        first: OracleError,
    },
}
