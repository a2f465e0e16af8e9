use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum SceError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric: entry ({row}, {col}) differs from ({col}, {row})")]
    Asymmetric { row: usize, col: usize },

    #[error("degenerate column `{label}`: {reason}")]
    DegenerateColumn { label: String, reason: String },

    #[error("insufficient data: need at least {required} rows, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("split {split}: {source}")]
    Split {
        split: usize,
        #[source]
        source: Box<SceError>,
    },

    #[error("infeasible dependence specification: {0}")]
    InfeasibleDependence(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error(
        "empty screen: no predictor survives threshold {threshold} \
         (largest |correlation| with the response was {max_abs})"
    )]
    EmptyScreen { threshold: f64, max_abs: f64 },

    #[error("internal consistency violated: {0}")]
    Consistency(String),

    #[error("degenerate response: total sum of squares is zero")]
    DegenerateResponse,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("data error at row {row}, column `{column}`: {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SceError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SceError::InvalidArgument(msg.into())
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            SceError::InvalidArgument(_) => "invalid_argument",
            SceError::Asymmetric { .. } => "asymmetric",
            SceError::DegenerateColumn { .. } => "degenerate_column",
            SceError::InsufficientData { .. } => "insufficient_data",
            SceError::Split { .. } => "split",
            SceError::InfeasibleDependence(_) => "infeasible_dependence",
            SceError::NotApplicable(_) => "not_applicable",
            SceError::EmptyScreen { .. } => "empty_screen",
            SceError::Consistency(_) => "consistency",
            SceError::DegenerateResponse => "degenerate_response",
            SceError::DimensionMismatch { .. } => "dimension_mismatch",
            SceError::Parse { .. } => "parse",
            SceError::Data { .. } => "data",
            SceError::Io(_) => "io",
            SceError::Json(_) => "json",
            SceError::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, SceError>;
