use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {what} at flat index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("matrix has no rows or no columns")]
    EmptyMatrix,
    #[error("threshold must be a nonnegative finite number, got {0}")]
    NegativeThreshold(f64),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("ill-conditioned system (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },
    #[error("shape {index} has {actual} points, expected {expected}")]
    PointCount {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("basis file: {0}")]
    BasisFormat(String),
    #[error("zero reference distance between landmarks {0} and {1}")]
    ZeroNormalization(usize, usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("solver diverged at outer {outer}, inner {inner}: non-finite iterate")]
    Diverged {
        outer: usize,
        inner: usize,
        trace: Box<crate::solver::Trace>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
