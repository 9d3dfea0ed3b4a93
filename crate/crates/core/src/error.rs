use thiserror::Error;

use crate::domain::AttrSet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("attribute {index} has domain size {size}; every domain needs at least 2 values")]
    SizeTooSmall { index: usize, size: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("at most {max} attributes are supported, got {actual}")]
    TooManyAttributes { max: usize, actual: usize },

    #[error("universe size overflows a 64-bit count")]
    UniverseOverflow,

    #[error("attribute index {index} out of range for a universe with {d} attributes")]
    AttributeOutOfRange { index: usize, d: usize },

    #[error("value {value} out of range for attribute {index} (domain size {size})")]
    ValueOutOfRange { index: usize, value: i64, size: usize },

    #[error("assignment out of range for attribute {index}")]
    AssignmentOutOfRange { index: usize },

    #[error("workload contains the set {0} more than once")]
    DuplicateSet(AttrSet),

    #[error("weight {weight} for set {set} is negative or not finite")]
    InvalidWeight { set: AttrSet, weight: f64 },

    #[error("all workload weights are zero")]
    AllZeroWeights,

    #[error("workload is empty")]
    EmptyWorkload,

    #[error("array shape mismatch: expected {expected} entries, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("need 1 <= k <= d and m >= 2, got d={d}, k={k}, m={m}")]
    BadArity { d: usize, k: usize, m: usize },

    #[error("negative noise variance {0}")]
    NegativeVariance(f64),

    #[error("privacy budget mismatch: shares sum to {total}, expected {expected}")]
    BudgetMismatch { total: f64, expected: f64 },

    #[error("mu must be positive and finite, got {0}")]
    InvalidMu(f64),

    #[error("set {0} has zero weight and needs Fourier coefficients that are not measured")]
    Unestimable(AttrSet),

    #[error("all attributes must share one domain size for the k-way mechanism")]
    NonUniformDomain,

    #[error("query kind mismatch: {0}")]
    KindMismatch(&'static str),

    #[error("weights are not on the probability simplex (sum {sum}, min {min})")]
    NotOnSimplex { sum: f64, min: f64 },

    #[error("optimizer did not converge in {iterations} iterations (kkt residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("dense materialization too large: {rows} x {cols} exceeds the cap")]
    DenseTooLarge { rows: usize, cols: usize },

    #[error("grid search supports at most {max} sets, got {actual}")]
    TooManySets { max: usize, actual: usize },

    #[error("invalid input: {0}")]
    Parse(String),
}
