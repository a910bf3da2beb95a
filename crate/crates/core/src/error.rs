use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("imputation failed: {0}")]
    ImputationFailure(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("insufficient sample: need more than {needed} observations, have {available}")]
    InsufficientSample { needed: usize, available: usize },

    #[error("bootstrap round {round} failed: {source}")]
    BootstrapFailure {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("null simulation unstable: {failed} of {total} runs failed")]
    NullSimulationUnstable { failed: usize, total: usize },

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
