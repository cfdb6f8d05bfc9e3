use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("group {0} adds no new directions to the design")]
    RankDeficient(usize),
    #[error("group index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("zero variance increment for group {0}")]
    ZeroVariance(usize),
    #[error("grid resolution N must be at least 1, got {0}")]
    InvalidN(usize),
    #[error("quadratic term is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },
    #[error("grid enumeration of {count} points exceeds the budget")]
    TooLargeGrid { count: u128 },
    #[error("leverage of observation {obs} in model {model} is 1; leave-one-out residual undefined")]
    LeverageOne { model: usize, obs: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("exponential decay has no finite-N limit ratio other than 1")]
    KindMismatch,
    #[error("candidate-count rule cannot be classified against the optimal index")]
    RegimeUndetermined,
    #[error("need at least 10 positive entries, got {0}")]
    TooShort(usize),
    #[error("coefficient {0} recovered from the target sequence is negative")]
    NegativeBeta(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{aborted} of {total} replicates aborted; last reason: {reason}")]
    TooManyAborted {
        aborted: usize,
        total: usize,
        reason: String,
    },
}
