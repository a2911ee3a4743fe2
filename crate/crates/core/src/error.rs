use thiserror::Error;

use crate::basis::BasisError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Basis(#[from] BasisError),

    #[error("dimension mismatch in {what}: expected {expected:?}, found {found:?}")]
    Dimension {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("{matrix} violates the control-graph structure: block ({row}, {col}) is nonzero but s_K[{row}][{col}] = 0")]
    Structure {
        matrix: String,
        row: usize,
        col: usize,
    },

    #[error("parameter {index} = {value} lies outside [{lo}, {hi}]")]
    OutOfBox {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("closed loop is not stable")]
    Unstable,

    #[error("eigenvalue iteration failed to converge for a {0}x{0} matrix")]
    EigenFailure(usize),

    #[error("resolvent is singular at omega = {0}")]
    SingularResolvent(f64),

    #[error("H-infinity level-set iteration stagnated after {0} iterations")]
    Stagnation(usize),

    #[error("no stabilizing starting gain found after {0} attempts")]
    NoStabilizingStart(usize),

    #[error("instability abort: {0}")]
    InstabilityAbort(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
