use thiserror::Error;

#[derive(Debug, Error)]
pub enum DdtError {
    #[error("invalid tree spec: {0}")]
    InvalidSpec(String),
    #[error("input shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("node index {index} out of range for tree with {count} internal nodes")]
    NodeOutOfRange { index: usize, count: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("parameter vector length mismatch: expected {expected}, got {got}")]
    ParamLengthMismatch { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

impl DdtError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        DdtError::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DdtError>;
