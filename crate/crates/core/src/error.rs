use thiserror::Error;

/// Errors surfaced by the compute core and everything built on it.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("non-finite value produced by node {node} ({op}) at flat index {index}")]
    NonFinite {
        node: usize,
        op: String,
        index: usize,
    },

    #[error("unknown leaf binding: {0}")]
    UnknownLeaf(String),

    #[error("missing binding for leaf '{0}'")]
    MissingBinding(String),

    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("task error: {0}")]
    Task(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        CoreError::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
