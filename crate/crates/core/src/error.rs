use thiserror::Error;

/// Errors produced by model construction, chain analysis and search.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("state pair ({0}, {1}) is degenerate: states must differ")]
    DegeneratePair(usize, usize),

    #[error("signal rows {0} and {1} are identical")]
    IdenticalRows(usize, usize),

    #[error("size {requested} exceeds the cap of {cap}")]
    SizeCap { requested: usize, cap: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("index {index} out of range for {what} of size {len}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("stationary solve failed (residual {residual:e})")]
    Solver { residual: f64 },

    #[error("search space of {count} candidates exceeds the budget of {budget}")]
    Budget { count: u128, budget: u128 },

    #[error("action {0} owns no memory state")]
    EmptyDecisionRegion(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
