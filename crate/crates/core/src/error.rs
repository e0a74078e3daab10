use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments to a library call.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Parameters out of support, or a covariance matrix that fails the
    /// Cholesky check even after the largest nugget.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("design matrix is rank deficient (offending columns: {columns:?})")]
    RankDeficient { columns: Vec<usize> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) => 2,
            Error::InvalidParameter(_) | Error::Numerical(_) => 3,
            Error::RankDeficient { .. } | Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Numerical(_) => "numerical",
            Error::Data(_) => "data",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
