use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Location of a malformed input cell, reported by `validate`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct CellRef {
    pub file: PathBuf,
    /// 1-based line number in the file (the header is line 1).
    pub row: u64,
    pub column: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error in {} line {} column `{}`: {message}", .at.file.display(), .at.row, .at.column)]
    Schema { at: CellRef, message: String },

    #[error("missing week {week} in {what}")]
    MissingWeek { what: String, week: usize },

    #[error("hospitalization rows reference zip `{zip}` with no metadata")]
    UnknownZip { zip: String },

    #[error("need at least 4 zip codes, found {0}")]
    TooFewZips(usize),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite linear predictor at row {0}")]
    NonFiniteEta(usize),

    #[error("invalid response: {0}")]
    InvalidResponse(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("need at least {needed} residuals, got {got}")]
    TooFewResiduals { needed: usize, got: usize },

    #[error("group {group} has fewer than 2 usable zip codes")]
    GroupTooSmall { group: usize },

    #[error("matrix has rank 0 after centering")]
    DegenerateMatrix,

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("empty error vector")]
    EmptyErrors,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Schema { .. } => "schema",
            Error::MissingWeek { .. } => "missing_week",
            Error::UnknownZip { .. } => "unknown_zip",
            Error::TooFewZips(_) => "too_few_zips",
            Error::InvalidPanel(_) => "invalid_panel",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::InsufficientHistory(_) => "insufficient_history",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::NonFiniteEta(_) => "non_finite_eta",
            Error::InvalidResponse(_) => "invalid_response",
            Error::Config(_) => "config",
            Error::TooFewResiduals { .. } => "too_few_residuals",
            Error::GroupTooSmall { .. } => "group_too_small",
            Error::DegenerateMatrix => "degenerate_matrix",
            Error::RankDeficient => "rank_deficient",
            Error::EmptyErrors => "empty_errors",
            Error::Json(_) => "json",
        }
    }

    /// True for errors caused by malformed inputs or configuration.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Schema { .. }
                | Error::MissingWeek { .. }
                | Error::UnknownZip { .. }
                | Error::TooFewZips(_)
                | Error::InvalidPanel(_)
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}
