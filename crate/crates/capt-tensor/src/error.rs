use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: contract violation: {what}")]
    Contract { op: &'static str, what: String },

    #[error("{op}: degenerate gradient: {what}")]
    DegenerateGradient { op: &'static str, what: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("{op}: domain error: {what}")]
    Domain { op: &'static str, what: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint format error: {0}")]
    Format(String),
}

impl TensorError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn contract(op: &'static str, what: impl Into<String>) -> Self {
        TensorError::Contract {
            op,
            what: what.into(),
        }
    }
}
