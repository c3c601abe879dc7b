use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("answer value {0} is not a sign (must be -1 or +1)")]
    InvalidSign(i64),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("self-coupling on examinee {0} is not allowed")]
    SelfCoupling(usize),

    #[error("{size} examinees is too many for exact enumeration (limit {limit})")]
    TooLargeForEnumeration { size: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("objective became non-finite at iteration {iteration} (learning rate too large?)")]
    NonFinite { iteration: usize },

    #[error("active coupling set is empty")]
    EmptyActiveSet,

    #[error("{0} truth is identically zero, relative error is undefined")]
    ZeroDenominator(&'static str),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Error {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &std::path::Path, message: impl ToString) -> Error {
        Error::Parse {
            path: path.display().to_string(),
            message: message.to_string(),
        }
    }
}
