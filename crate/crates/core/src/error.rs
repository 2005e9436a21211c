use thiserror::Error;

#[derive(Debug, Error)]
pub enum KafError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KafError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(KafError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
