use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DosaError>;

#[derive(Debug, Error)]
pub enum DosaError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("backward requires a 1x1 output, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("value {value} at ({row}, {col}) is outside [0, 1]")]
    Range { row: usize, col: usize, value: f64 },

    #[error("label at ({row}, {col}) is {value}, expected -1 or +1")]
    LabelDomain { row: usize, col: usize, value: f64 },

    #[error("margin vector has zero total magnitude")]
    DegenerateMargin,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported attribute type '{kind}' at line {line}")]
    UnsupportedType { line: usize, kind: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("nothing to report in {0}")]
    NothingToReport(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DosaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DosaError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            DosaError::Dimension { .. } => "dimension",
            DosaError::NotScalar { .. } => "not_scalar",
            DosaError::NonFinite(_) => "non_finite",
            DosaError::Range { .. } => "range",
            DosaError::LabelDomain { .. } => "label_domain",
            DosaError::DegenerateMargin => "degenerate_margin",
            DosaError::Parse { .. } => "parse",
            DosaError::UnsupportedType { .. } => "unsupported_type",
            DosaError::Config(_) => "config",
            DosaError::State(_) => "state",
            DosaError::Index { .. } => "index",
            DosaError::NothingToReport(_) => "nothing_to_report",
            DosaError::Io { .. } => "io",
            DosaError::Json(_) => "json",
            DosaError::Csv(_) => "csv",
        }
    }
}
