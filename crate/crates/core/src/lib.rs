//! Optimum discrimination of partially polarized and mixed single-photon
//! states.
//!
//! The crate covers three strategies (minimum error, maximum confidence and
//! unambiguous discrimination) at three levels: closed-form figures of merit,
//! explicit POVMs, and linear-optics networks of wave plates and polarizing
//! beam splitters whose click statistics are sampled by a seeded Monte Carlo
//! engine.

pub mod cli;
pub mod error;
pub mod linalg;
pub mod montecarlo;
pub mod network;
pub mod quantum;
pub mod states;
pub mod strategies;
pub mod tol;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
