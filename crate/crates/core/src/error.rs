use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Machine-checkable evidence attached to validation failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// A matrix (named by its JSON location) has this eigenvalue.
    Eigenvalue { matrix: String, value: f64 },
    /// The entry at this index is the offender.
    Index { field: String, index: usize },
    /// Two sizes that were required to agree.
    Dimensions { field: String, expected: usize, found: usize },
    /// A residual that exceeded its threshold.
    Residual { field: String, value: f64 },
}

impl std::fmt::Display for Witness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Witness::Eigenvalue { matrix, value } => write!(f, "{matrix} has eigenvalue {value:e}"),
            Witness::Index { field, index } => write!(f, "{field}[{index}]"),
            Witness::Dimensions { field, expected, found } => {
                write!(f, "{field}: expected dimension {expected}, found {found}")
            }
            Witness::Residual { field, value } => write!(f, "{field} residual {value:e}"),
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {message} ({witness})")]
    Validation { message: String, witness: Witness },
    #[error("range of C is not included in the range of the constraint matrices")]
    RangeInclusionFails,
    #[error("problem is unbounded")]
    UnboundedInput,
    #[error("problem is infeasible: b[{index}] < 0")]
    InfeasibleInput { index: usize },
    #[error("objective matrix has rank {rank}, expected 1")]
    RankNotOne { rank: usize },
    #[error("matrix R[{index}] is nonzero; the cone reduction needs every R_i = 0")]
    NonzeroR { index: usize },
    #[error("h0 is nonzero; the cone reduction needs h0 = 0")]
    NonzeroH0,
    #[error("primal problem is infeasible (phase-one value {margin:e})")]
    InfeasiblePrimal { margin: f64 },
    #[error("dual problem is infeasible (phase-one value {margin:e})")]
    InfeasibleDual { margin: f64 },
    #[error("design criterion does not match the requested builder")]
    WrongCriterion,
    #[error("design problem is infeasible: {0}")]
    InfeasibleDesign(String),
    #[error("interior-point method hit the iteration limit ({iterations})")]
    MaxIterations { iterations: usize },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("perturbation path value increased with the perturbation: {previous} -> {current}")]
    PathDiverged { previous: f64, current: f64 },
    #[error("trace-capped path value decreased: {previous} -> {current}")]
    PathNotMonotone { previous: f64, current: f64 },
    #[error("dual vector is zero; no design can be recovered")]
    ZeroDual,
}

pub type Result<T> = std::result::Result<T, Error>;
