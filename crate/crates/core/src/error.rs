use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("column {0} has no observed values")]
    ColumnAllMissing(usize),

    #[error("cell ({row}, {col}) is missing")]
    MissingCell { row: usize, col: usize },

    #[error("perfect separation in logistic fit (max |coef| = {max_abs_coef:.3e})")]
    Separation { max_abs_coef: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{method}: {source}")]
    Method {
        method: String,
        #[source]
        source: Box<Error>,
    },

    #[error("csv error at row {row}, column {col}: {msg}")]
    Csv { row: usize, col: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_method(self, method: &str) -> Error {
        Error::Method {
            method: method.to_string(),
            source: Box::new(self),
        }
    }
}
