use mdx_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("state error: {0}")]
    State(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("non-finite loss at iteration {iteration} (tti seed {tti_seed})")]
    NonFinite { iteration: usize, tti_seed: u64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<AutodiffError> for Error {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::Shape(m) => Error::Shape(m),
            AutodiffError::Config(m) => Error::Config(m),
            AutodiffError::State(m) => Error::State(m),
            AutodiffError::Singular(m) => Error::Singular(m),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
