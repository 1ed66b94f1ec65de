use std::path::PathBuf;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {op} got {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("degenerate feature: row {row} has norm below 1e-12")]
    DegenerateFeature { row: usize },

    #[error("degenerate representation: {0}")]
    DegenerateRepresentation(String),

    #[error("finite-difference oracle failed: non-finite value at coordinate {coord}")]
    OracleFailure { coord: usize },

    #[error("batch too small: batch norm in training mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),

    #[error("numeric overflow in layer `{0}`")]
    NumericOverflow(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("feature collapse: per-dimension std {0:e} is below 1e-6")]
    FeatureCollapse(f64),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("unknown study `{name}`; available: {available}")]
    UnknownStudy { name: String, available: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
