use thiserror::Error;

/// Errors produced anywhere in the audit engine.
#[derive(Debug, Error)]
pub enum AuditError {
    #[error("parse error at record {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("duplicate record id `{0}`")]
    DuplicateRecord(String),
    #[error("unknown contest `{0}`")]
    UnknownContest(String),
    #[error("invalid contest `{contest}`: {message}")]
    InvalidContest { contest: String, message: String },
    #[error("upper bound of {upper_bound} cards is smaller than the {cvrs} CVRs containing contest `{contest}`")]
    ImpossibleUpperBound { contest: String, upper_bound: u64, cvrs: u64 },
    #[error("index {index} is outside 1..={size}")]
    IndexOutOfRange { index: u64, size: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("negative sample value {0}")]
    NegativeValue(String),
    #[error("sample of {drawn} draws exceeds population of {population}")]
    SampleTooLarge { drawn: usize, population: u64 },
    #[error("score {score} for candidate `{candidate}` is outside [0, {upper}]")]
    ScoreOutOfRange { candidate: String, score: String, upper: String },
    #[error("non-positive reported margin {0}: the CVRs do not support the outcome")]
    NonPositiveMargin(String),
    #[error("inconsistent comparison draw: {0}")]
    InconsistentDraw(String),
    #[error("population exhausted: all {0} cards have been drawn")]
    Exhausted(u64),
    #[error("round error: {0}")]
    Round(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = AuditError> = std::result::Result<T, E>;

impl AuditError {
    /// Stable machine-readable code used in service and FFI error payloads.
    pub fn code(&self) -> &'static str {
        match self {
            AuditError::Parse { .. } | AuditError::Json(_) | AuditError::Csv(_) => "parse_error",
            AuditError::DuplicateRecord(_) => "duplicate_record",
            AuditError::UnknownContest(_) => "unknown_contest",
            AuditError::InvalidContest { .. } => "invalid_contest",
            AuditError::ImpossibleUpperBound { .. } => "impossible_upper_bound",
            AuditError::IndexOutOfRange { .. } => "index_out_of_range",
            AuditError::InvalidArgument(_)
            | AuditError::NegativeValue(_)
            | AuditError::SampleTooLarge { .. }
            | AuditError::ScoreOutOfRange { .. } => "invalid_argument",
            AuditError::NonPositiveMargin(_) => "non_positive_margin",
            AuditError::InconsistentDraw(_) => "inconsistent_draw",
            AuditError::Exhausted(_) => "exhausted",
            AuditError::Round(_) => "round_error",
            AuditError::Conflict(_) => "conflict",
            AuditError::NotFound(_) => "not_found",
            AuditError::Io(_) => "io_error",
        }
    }
}
