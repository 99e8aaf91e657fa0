use std::fmt;

/// Reasons a corpus line can be rejected during ingestion.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationKind {
    Malformed(String),
    MissingHeader,
    UnsupportedVersion(u64),
    DuplicateModel(String),
    NegativePrice { model: String },
    DimensionMismatch { expected: usize, found: usize },
    NonFiniteEncoding { query_id: String },
    UnknownModel { query_id: String, model: String },
    MissingModel { query_id: String, model: String },
    AccuracyOutOfRange { query_id: String, model: String, value: f64 },
    InvalidCost { query_id: String, model: String, value: f64 },
    DuplicateQuery(String),
}

impl fmt::Display for ValidationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Malformed(msg) => write!(f, "malformed record: {msg}"),
            Self::MissingHeader => f.write_str("first line must be the corpus header"),
            Self::UnsupportedVersion(v) => write!(f, "unsupported format_version {v}"),
            Self::DuplicateModel(id) => write!(f, "model '{id}' listed twice in header"),
            Self::NegativePrice { model } => write!(f, "model '{model}' has a negative or non-finite price"),
            Self::DimensionMismatch { expected, found } => {
                write!(f, "encoding has {found} entries, expected {expected}")
            }
            Self::NonFiniteEncoding { query_id } => {
                write!(f, "record '{query_id}' has a non-finite encoding entry")
            }
            Self::UnknownModel { query_id, model } => {
                write!(f, "record '{query_id}' observes unknown model '{model}'")
            }
            Self::MissingModel { query_id, model } => {
                write!(f, "record '{query_id}' has no observation for model '{model}'")
            }
            Self::AccuracyOutOfRange { query_id, model, value } => write!(
                f,
                "record '{query_id}' model '{model}': accuracy {value} outside [0, 1]"
            ),
            Self::InvalidCost { query_id, model, value } => write!(
                f,
                "record '{query_id}' model '{model}': cost {value} must be finite and >= 0"
            ),
            Self::DuplicateQuery(id) => write!(f, "query_id '{id}' appears more than once"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("corpus inconsistency: {0}")]
    Consistency(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("line {line}: {kind}")]
    Validation { line: usize, kind: ValidationKind },
    #[error("artifact format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub(crate) fn validation(line: usize, kind: ValidationKind) -> Self {
        Self::Validation { line, kind }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
