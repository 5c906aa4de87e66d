use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {context}: {lhs:?} vs {rhs:?}")]
    Shape {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training diverged: non-finite loss at epoch {epoch}, last finite epoch {last_finite:?}")]
    Diverged {
        epoch: usize,
        last_finite: Option<usize>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
