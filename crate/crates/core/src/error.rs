use std::fmt;

use thiserror::Error;

/// One invalid field on one line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: field `{}`: {}", self.line, self.field, self.message)
    }
}

/// Which external model service a failure came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Embedding,
    Rerank,
    Chat,
    Alignment,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::Embedding => "embedding",
            ProviderKind::Rerank => "rerank",
            ProviderKind::Chat => "chat",
            ProviderKind::Alignment => "alignment",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("document is empty after normalization")]
    EmptyDocument,

    #[error("dataset schema violation: {}", join_violations(.0))]
    SchemaViolation(Vec<Violation>),

    #[error("embedding provider unavailable: {0}")]
    EmbeddingUnavailable(String),

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("embedding model mismatch: index holds `{expected}`, provider is `{got}`")]
    ModelMismatch { expected: String, got: String },

    #[error("rerank provider unavailable: {0}")]
    RerankUnavailable(String),

    #[error("chat provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("alignment scorer unavailable: {0}")]
    ScorerUnavailable(String),

    #[error("malformed report_stance tool call: {0}")]
    MalformedToolCall(String),

    #[error("stance score {0} is outside -2..=2")]
    ScoreOutOfRange(i64),

    #[error("provider does not expose completion log-probabilities")]
    LogprobsUnsupported,

    #[error("evidence mode requires a gold evidence snippet")]
    MissingGold,

    #[error("no retrieval hits to select evidence from")]
    NoHits,

    #[error("gold evidence has no tokens")]
    EmptyGold,

    #[error("nLCS operand has no tokens")]
    EmptyOperand,

    #[error("probability must lie in (0, 1], got {0}")]
    NonPositiveProbability(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed persisted file {path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    /// The provider a failure is attributed to, when it is a provider failure.
    pub fn provider(&self) -> Option<ProviderKind> {
        match self {
            Error::EmbeddingUnavailable(_)
            | Error::DimensionMismatch { .. }
            | Error::ModelMismatch { .. } => Some(ProviderKind::Embedding),
            Error::RerankUnavailable(_) => Some(ProviderKind::Rerank),
            Error::ProviderUnavailable(_)
            | Error::MalformedToolCall(_)
            | Error::ScoreOutOfRange(_)
            | Error::LogprobsUnsupported => Some(ProviderKind::Chat),
            Error::ScorerUnavailable(_) => Some(ProviderKind::Alignment),
            _ => None,
        }
    }

    pub fn is_provider_error(&self) -> bool {
        self.provider().is_some()
    }

    pub(crate) fn format(path: impl fmt::Display, message: impl fmt::Display) -> Self {
        Error::Format { path: path.to_string(), message: message.to_string() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
