use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },

    #[error("non-numeric value `{value}` in column `{column}` at row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("split point `{0}` is outside the data range")]
    SplitOutOfRange(String),

    #[error("need at least {required} training rows, got {got}")]
    TooFewTrainingRows { required: usize, got: usize },

    #[error("series `{0}` is constant over the training sample")]
    ConstantSeries(String),

    #[error("index set `{0}` is empty")]
    EmptyIndex(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("gram matrix is rank-deficient or ill-conditioned (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("degenerate variance ({denominator:.3e}); try a smaller lag truncation h")]
    DegenerateVariance { denominator: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible validation scheme: {0}")]
    InfeasibleScheme(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
