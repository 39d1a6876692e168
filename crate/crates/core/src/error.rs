use thiserror::Error;

use crate::model::Vertex;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vertex {to:?} is unreachable from {from:?}")]
    DistanceUnreachable { from: Vertex, to: Vertex },

    #[error("window of {states} states exceeds the cap of {cap}")]
    WindowTooLarge { states: u128, cap: usize },

    #[error("kernel tail is not summable: {0}")]
    DivergentTail(String),

    #[error("poisson truncation needs more than {cap} terms (rate*t = {mean})")]
    TruncationBudgetExceeded { mean: f64, cap: usize },

    #[error("process never leaves the window (no killing)")]
    NoExit,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("exterior vertex {0:?} is not tracked by the model")]
    ExteriorOutOfRange(Vertex),

    #[error("window not converged: {0}")]
    WindowUnconverged(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model constant violated: {0}")]
    ConstantViolated(String),

    #[error("empty sweep grid: {0}")]
    EmptyGrid(&'static str),

    #[error("wrong boundary mode: {0}")]
    WrongMode(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
