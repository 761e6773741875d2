use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code classes:
/// data problems (I/O, parsing, empty or mismatched inputs) versus numeric
/// domain violations (bad dimensions, degenerate parameters).
#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: malformed line: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: String,
        found: String,
    },

    #[error("{0}")]
    Domain(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("mismatch: {0}")]
    Mismatch(String),
}

impl Error {
    /// True for errors caused by bad input data rather than numeric domains.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Parse { .. }
                | Error::EmptyDataset(_)
                | Error::Format(_)
                | Error::Mismatch(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
