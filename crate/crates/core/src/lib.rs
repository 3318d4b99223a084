//! Measurement algorithms for one-sided communication routines, checked
//! against a deterministic simulated PGAS runtime whose event log is the
//! ground truth.

pub mod checks;
pub mod coll;
pub mod harness;
pub mod lockbench;
pub mod netmodel;
pub mod p2p;
pub mod sim;
pub mod stats;
pub mod sync;

use thiserror::Error;

use crate::sim::SimError;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BenchError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid measurement: {0}")]
    Invalid(String),
}
