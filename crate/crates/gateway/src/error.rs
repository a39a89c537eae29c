use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("batch overflow: {got} samples exceed batch limit {limit}")]
    BatchOverflow { got: usize, limit: usize },
    #[error("template error: {0}")]
    Template(String),
    #[error("invalid JSONPath {path:?}: {reason}")]
    Path { path: String, reason: String },
    #[error("malformed JSON response: {0}")]
    MalformedJson(String),
    #[error("cardinality mismatch: {what} path yielded {got} values, expected {expected}")]
    Cardinality {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-numeric confidence: {0}")]
    NonNumericConfidence(String),
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceRange(f64),
    #[error("unusable label: {0}")]
    Label(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("upstream returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("unknown mock model kind {0:?}")]
    UnknownMock(String),
    #[error("mock model cannot handle sample: {0}")]
    MockInput(String),
}

impl GatewayError {
    /// Transport failures and 5xx responses are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;
