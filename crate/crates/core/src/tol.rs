//! Numerical tolerances shared by every validation and property check.

/// Hermiticity, trace and norm checks on constructed objects.
pub const CONSTRUCTION: f64 = 1e-12;

/// Slack allowed on positivity and on POVM / Kraus completeness.
pub const PSD_SLACK: f64 = 1e-10;

/// Eigen-solver residual bound.
pub const SOLVER: f64 = 1e-9;

/// Probabilities in `[-PROB_CLAMP, 0)` are rounded to zero.
pub const PROB_CLAMP: f64 = 1e-12;

/// Click distributions must sum to one within this bound.
pub const DIST_SUM: f64 = 1e-10;

/// Population left undetected at the end of a circuit.
pub const LEFTOVER: f64 = 1e-10;
