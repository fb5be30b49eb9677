use thiserror::Error;

/// Errors raised by the model, prior, sampler and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("leaves {leaves:?} are not at unit depth (depths {depths:?})")]
    DepthViolation { leaves: Vec<usize>, depths: Vec<f64> },

    #[error("tree contains a cycle through node {0}")]
    Cycle(usize),

    #[error("tree leaf mapping is invalid: {0}")]
    LeafMapping(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("likelihood cache is stale (cache version {cache}, state version {state})")]
    StaleCache { cache: u64, state: u64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that come from bad input data rather than from the
    /// numerics or from a programming error.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Numerical(_) | Error::StaleCache { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
