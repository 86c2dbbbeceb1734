use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: bad partitions, inconsistent dimensions, invalid control values.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// CSV cell that does not parse as a finite real, with file location (1-based,
    /// header counts as row 1).
    #[error("csv parse error at row {row}, column {column}: {message}")]
    CsvParse {
        row: usize,
        column: usize,
        message: String,
    },

    /// Structural CSV problems: ragged rows, duplicate headers, empty body.
    #[error("csv format error: {0}")]
    CsvFormat(String),

    /// Regressor matrix without full column rank; indices are 0-based columns of
    /// the regressor slice that are linearly dependent on earlier ones.
    #[error("rank-deficient regressor matrix: dependent columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    /// A component covariance collapsed below the eigenvalue floor and stayed there.
    #[error("degenerate fit: component {component} covariance collapsed")]
    DegenerateFit { component: usize },

    /// A user-supplied covariance that is not positive definite.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// Combinatorial search exceeded its configured budget.
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    /// An error raised while fitting one factor of a joint model.
    #[error("block {block}: {source}")]
    Block {
        block: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Tag an error with the joint-model block it came from.
    pub fn in_block(self, block: impl Into<String>) -> Error {
        Error::Block {
            block: block.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 validation, 3 numerical, 4 budget.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::CsvParse { .. }
            | Error::CsvFormat(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::RankDeficient { .. }
            | Error::DegenerateFit { .. }
            | Error::NotPositiveDefinite(_) => 3,
            Error::BudgetExceeded(_) => 4,
            Error::Block { source, .. } => source.exit_code(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
