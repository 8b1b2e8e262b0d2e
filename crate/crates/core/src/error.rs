use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    /// A caller broke an operation's precondition.
    #[error("contract violated: {0}")]
    Contract(String),

    #[error("{what} index {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("invalid taxonomy: {}", .0.join("; "))]
    Taxonomy(Vec<String>),

    #[error("unknown label {0}")]
    UnknownLabel(String),

    #[error("invalid expert prefix: {0}")]
    InvalidPrefix(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("embedding dimension mismatch in {file}: file has {file_dim}, model h is {model_dim}")]
    EmbeddingDim {
        file: PathBuf,
        file_dim: usize,
        model_dim: usize,
    },

    #[error("checkpoint parse error at byte {offset}: {reason}")]
    Checkpoint { offset: usize, reason: String },

    #[error("taxonomy fingerprint mismatch: checkpoint has {checkpoint}, taxonomy has {taxonomy}")]
    FingerprintMismatch { checkpoint: String, taxonomy: String },

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
