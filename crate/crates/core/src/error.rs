use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("mode {mode} out of range for an order-{order} tensor")]
    InvalidMode { mode: usize, order: usize },

    #[error("index {index} out of range 1..={extent} in mode {mode}")]
    IndexOutOfRange {
        mode: usize,
        index: usize,
        extent: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("requested {requested} entries exceeds the dense-size guard of {limit}")]
    SizeGuard { requested: usize, limit: usize },

    #[error("duplicate sample index {0:?}")]
    DuplicateIndex(Vec<usize>),

    #[error("sample count {count} out of range 1..={total}")]
    InvalidCount { count: usize, total: usize },

    #[error("Cholesky factorization of H_{mode} failed; increase delta")]
    Cholesky { mode: usize },

    #[error("metric state built for point {expected} used with vector anchored at {found:?}")]
    StaleMetric { expected: u64, found: Option<u64> },

    #[error("zero norm: {0}")]
    ZeroNorm(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty sample set: {0}")]
    EmptySet(&'static str),
}
