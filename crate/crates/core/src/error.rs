use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid problem instance: {0}")]
    InvalidInstance(String),

    #[error("matrix is not positive definite, even after ridge regularization")]
    NotPositiveDefinite,

    #[error("covariance matrix G is singular for user {user:?}")]
    SingularG { user: Option<usize> },

    #[error("bisection bracket did not enclose a root after {0} doublings")]
    BracketFailure(usize),

    #[error("downlink power system is singular")]
    SingularSystem,

    #[error("downlink power allocation produced a non-positive power for user {user}")]
    NegativePower { user: usize },

    #[error("beamforming matrix is identically zero")]
    ZeroBeamformer,

    #[error("zero-forcing requires N_t = K, got N_t = {nt}, K = {k}")]
    NotSquare { nt: usize, k: usize },

    #[error("channel matrix is singular")]
    SingularChannel,

    #[error("mu violates its normalization by {0:.3e} (more than 1%)")]
    MuNotNormalized(f64),

    #[error("dimension {got} exceeds container size {max}")]
    DimensionExceeded { got: usize, max: usize },

    #[error("raw output sums to zero; cannot normalize")]
    AllZero,

    #[error("schema error in `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("schema error at byte {offset}: {message}")]
    Record { offset: u64, message: String },

    #[error("record {index}: {source}")]
    AtRecord { index: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_record(index: usize, source: Error) -> Self {
        Error::AtRecord {
            index,
            source: Box::new(source),
        }
    }

    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }
}
