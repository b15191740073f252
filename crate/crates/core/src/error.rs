use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: unsupported or corrupt image: {message}", path.display())]
    Decode { path: PathBuf, message: String },

    #[error("image {width}x{height} is smaller than the {kernel}-pixel smoothing kernel")]
    TooSmall {
        width: usize,
        height: usize,
        kernel: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("edge map is empty, no contour exists")]
    EmptyEdgeMap,

    #[error("need at least 2 contour points, got {0}")]
    TooFewPoints(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("k = {k} exceeds the number of distinct descriptors ({distinct})")]
    TooFewDistinct { k: usize, distinct: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("duplicate image id `{0}`")]
    DuplicateId(String),

    #[error("{source_name}:{line}: malformed record: {message}")]
    Malformed {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("{source_name}: unsupported format header `{found}` (expected `{expected}`)")]
    Version {
        source_name: String,
        found: String,
        expected: &'static str,
    },

    #[error("index was built with vocabulary {index}, but the supplied vocabulary is {vocab}")]
    FingerprintMismatch { index: String, vocab: String },

    #[error("corpus: {0}")]
    Corpus(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Malformed {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }
}
