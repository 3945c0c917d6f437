use crate::model::Criterion;
use crate::oracle::OracleResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("X must be full rank: rank {rank} < {p} columns")]
    RankDeficientX { rank: usize, p: usize },

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("variance components must be finite and > 0 (tau2 = {tau2}, sigma2 = {sigma2})")]
    InvalidVarianceComponents { tau2: f64, sigma2: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),

    #[error("need n > p (n = {n}, p = {p})")]
    InsufficientDf { n: usize, p: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The grid maximizer ended on the outer edge of its search box. The
    /// result is still attached since the non-boundary coordinate is usually
    /// meaningful.
    #[error("oracle optimum on the search-box boundary (tau2 = {}, sigma2 = {})", .0.vc_star.tau2(), .0.vc_star.sigma2())]
    BoundaryHit(Box<OracleResult>),

    #[error("CriterionMismatch: cannot compare a {fit} fit against a {reference} reference")]
    CriterionMismatch {
        fit: Criterion,
        reference: Criterion,
    },
}
