use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised anywhere in the engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("inconsistent conditioning: observed value deviates by {0:e} along a zero-variance direction")]
    InconsistentConditioning(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("causal graph contains a cycle through node `{0}`")]
    CyclicGraph(String),
    #[error("rank-deficient design: columns {0:?} are linearly dependent")]
    RankDeficient(Vec<usize>),
    #[error("optimization diverged at step {step}")]
    Diverged { step: usize, trace: Vec<f64> },
    #[error("no counterfactual found before exhausting shells (last radius {0})")]
    NoCounterfactual(f64),
    #[error("no target-class node is reachable from the reference in the neighbour graph")]
    Unreachable,
    #[error("mode search failed: best restart reached target probability {0:.4} < 0.5")]
    ModeSearch(f64),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn dim_err(what: &str, expected: usize, got: usize) -> Error {
    Error::Dimension(alloc::format!("{what}: expected {expected}, got {got}"))
}
