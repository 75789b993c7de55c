use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite entry in {what} at index {index}")]
    NonFiniteEntry { what: String, index: usize },

    #[error("unsupported model shape: {0}")]
    UnsupportedShape(String),

    #[error("bound order violated for {what}[{index}]: lower {lower} > upper {upper}")]
    BoundOrderViolation {
        what: String,
        index: usize,
        lower: f64,
        upper: f64,
    },

    #[error("negative weight {value} in {what}[{index}]")]
    NegativeWeight {
        what: String,
        index: usize,
        value: f64,
    },

    #[error("length mismatch for {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("penalty parameter rho must be positive and finite, got {0}")]
    NonPositiveRho(f64),

    #[error("zero or negative diagonal entry {value} at coordinate {index}")]
    ZeroDiagonal { index: usize, value: f64 },

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("warm start outside the box for {what}[{index}] by {excess}")]
    InfeasibleWarmStart {
        what: String,
        index: usize,
        excess: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("equality constraints are rank deficient (rank {rank} < {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },

    #[error("reference solver did not reach tolerance within {iterations} iterations")]
    MaxIterationsExceeded { iterations: usize },

    #[error("problem too large for enumeration: {n} variables (limit {limit})")]
    TooLarge { n: usize, limit: usize },

    #[error("empty reference range [{lo}, {hi}]")]
    EmptyRange { lo: f64, hi: f64 },

    #[error("cannot compute statistics of an empty log")]
    EmptyLog,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn mismatch(what: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Error {
    Error::DimensionMismatch {
        what: what.into(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
