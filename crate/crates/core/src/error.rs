use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{what} is singular (condition number {condition:.3e})")]
    Singular { what: &'static str, condition: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("row {row} of the symbol matrix has zero power")]
    ZeroPower { row: usize },

    #[error("target covariance is not positive semidefinite (eigenvalue {eigenvalue:.3e})")]
    NotPsd { eigenvalue: f64 },

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config key `{key}`: {message}")]
    ConfigSemantic { key: String, message: String },

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(context: &'static str, expected: impl ToString, actual: impl ToString) -> Error {
    Error::Dimension {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
