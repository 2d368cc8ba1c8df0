use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("response {0} lies outside the truncation set")]
    OutsideSet(f64),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("covariate {value} exceeds the declared bound {bound}")]
    CovariateOutOfBounds { value: f64, bound: f64 },

    #[error("could not bracket the inverse within {0} doublings")]
    BracketNotFound(usize),

    #[error("interval mass underflows the log-space range")]
    MassUnderflow,

    #[error("rejection sampling exhausted {0} draws")]
    RejectionExhausted(usize),

    #[error("generator exhausted {0} attempts for one sample")]
    AttemptsExhausted(usize),

    #[error("quadrature did not converge")]
    QuadratureDiverged,

    #[error("eigen-iteration did not converge")]
    EigenNotConverged,

    #[error("covariate second-moment matrix is singular (min eigenvalue {0:e})")]
    SingularCovariates(f64),

    #[error("projection domain is empty")]
    EmptyDomain,

    #[error("ellipsoid volume underflow")]
    VolumeUnderflow,

    #[error("non-finite iterate at step {0}")]
    NonFiniteIterate(usize),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::DimensionMismatch { .. }
            | Error::InvalidParameter(_)
            | Error::OutsideSet(_)
            | Error::EmptyDataset
            | Error::CovariateOutOfBounds { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => true,
            Error::Context { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) fn ensure_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
