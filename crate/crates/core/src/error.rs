use thiserror::Error;

/// Errors raised by the estimation, explanation and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown token id {id} at position {position}")]
    UnknownToken { id: u32, position: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported capability: {0}")]
    Unsupported(String),

    #[error("covariance error: {0}")]
    Covariance(String),

    #[error("batch of {requested} elements exceeds the memory bound of {limit}; use the streaming estimator (explain) instead")]
    Capacity { requested: usize, limit: usize },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("rank deficient design: numerical rank {rank} of {size}")]
    RankDeficient { rank: usize, size: usize },

    #[error("linear program did not converge within {0} iterations")]
    IterationLimit(usize),

    #[error("linear program: {0}")]
    Lp(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("instance {index}: {source}")]
    Instance {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
