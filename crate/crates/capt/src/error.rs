use capt_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CaptError>;

#[derive(Debug, Error)]
pub enum CaptError {
    #[error("config error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("view degenerate: culling kept {kept} candidate points, need {needed}")]
    ViewDegenerate { kept: usize, needed: usize },

    #[error("training fault in term '{term}': {what}")]
    TrainingFault { term: String, what: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl CaptError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CaptError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
