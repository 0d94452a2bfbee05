use thiserror::Error;

use crate::quantum::OutcomeLabel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported dimension {0} (expected 2 or 4)")]
    UnsupportedDimension(usize),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("matrix is not Hermitian: max |A - A†| entry = {max_asymmetry:.3e}")]
    NotHermitian { max_asymmetry: f64 },

    #[error("matrix has a non-finite entry")]
    NonFinite,

    #[error("invalid density operator: {0}")]
    InvalidState(String),

    #[error("operator is not unitary: max |U†U - I| entry = {0:.3e}")]
    NotUnitary(f64),

    #[error("invalid POVM: {0}")]
    InvalidPovm(String),

    #[error("invalid Kraus set: {0}")]
    InvalidKraus(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate filter: {0}")]
    DegenerateFilter(String),

    #[error("outcome {0} not present in measurement")]
    MissingOutcome(OutcomeLabel),

    #[error("confidence undefined for outcome {0}: outcome has zero probability")]
    UndefinedConfidence(OutcomeLabel),

    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),

    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    #[error("output: {0}")]
    Output(String),
}
