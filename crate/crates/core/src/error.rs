use std::path::PathBuf;

use thiserror::Error;

use crate::cube_algebra::AlgebraError;
use crate::data::IdxError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("regularization weight must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("quadratic loss needs a non-empty batch")]
    EmptyBatch,
    #[error("invalid split: {0}")]
    Split(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite values in {tensor} at epoch {epoch}, step {step}")]
    NonFinite {
        tensor: String,
        epoch: usize,
        step: usize,
    },
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
