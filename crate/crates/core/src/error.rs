use std::io;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupt container: {0}")]
    CorruptContainer(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("non-finite loss at iteration {iteration}: emb={emb:?} rec={rec:?} den={den:?}")]
    NonFiniteLoss {
        iteration: u64,
        emb: Option<f64>,
        rec: Option<f64>,
        den: Option<f64>,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors caused by bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::ShapeMismatch(_)
                | Error::InvalidArgument(_)
                | Error::CorruptContainer(_)
                | Error::EmptyDataset(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
