use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("newick parse error at byte {position}: {message}")]
    Newick { position: usize, message: String },

    #[error("tip '{0}' has no entry in the date map")]
    MissingDate(String),

    #[error("tip '{label}' has tree age {tree_age} but supplied date {date}")]
    InconsistentDate { label: String, tree_age: f64, date: f64 },

    #[error("invalid genealogy: {0}")]
    InvalidGenealogy(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("simulation failure: {0}")]
    Simulation(String),

    #[error("degenerate skyline: log skyline estimates have zero spread")]
    DegenerateSkyline,
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
