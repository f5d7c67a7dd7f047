use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("box {0} is outside the window's box range")]
    BoxOutOfBounds(String),

    #[error("vertex {0} is outside the window")]
    VertexOutOfWindow(String),

    #[error("empty vertex set")]
    EmptySet,

    /// The cluster reaches the outermost vertex layer and is treated as infinite.
    #[error("cluster touches the window rim (treated as infinite)")]
    InfiniteCluster,

    #[error("no boundary-touching cluster in the window")]
    NoInfiniteCluster,

    #[error("structure reaches the window margin: {0}")]
    MarginViolation(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("enumeration budget of {0} states exceeded")]
    BudgetExceeded(u64),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
