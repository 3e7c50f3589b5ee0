use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rectangle {x},{y} {w}x{h} exceeds {width}x{height} image")]
    OutOfBounds {
        x: i64,
        y: i64,
        w: i64,
        h: i64,
        width: usize,
        height: usize,
    },

    #[error("image {width}x{height} is smaller than the {base}px detection window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        base: usize,
    },

    #[error("degenerate training set: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown identity label `{0}`")]
    UnknownLabel(String),

    #[error("need at least two identities, got {0}")]
    InsufficientIdentities(usize),

    #[error("training split is empty")]
    EmptyTrainSplit,

    #[error("malformed file at line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("unsupported format version `{0}`")]
    VersionMismatch(String),

    #[error("image format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn malformed(line: usize, msg: impl Into<String>) -> Self {
        Error::Malformed {
            line,
            msg: msg.into(),
        }
    }
}
