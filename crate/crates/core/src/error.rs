use std::path::PathBuf;

use semocc_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid calibration: {0}")]
    Calibration(String),
    #[error("{what}: expected {expected}, got {got}")]
    Dims {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("auxiliary class `{0}` is not in the taxonomy")]
    UnknownAuxClass(String),
    #[error("taxonomy: {0}")]
    Taxonomy(String),
    #[error("frame {0} is both annotated and pseudo-labelled")]
    OverlappingFrames(usize),
    #[error("fusion grid {dims:?} is not divisible by {multiple}; pad to {required:?}")]
    FusionPadding {
        dims: [usize; 3],
        multiple: usize,
        required: [usize; 3],
    },
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dims_err(what: &'static str, expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Error {
    Error::Dims {
        what,
        expected: format!("{expected:?}"),
        got: format!("{got:?}"),
    }
}
