//! Backward stochastic differential equations with a bounded stopping-time
//! horizon, solved directly or after normalising the horizon to 1 by a
//! per-path time change.

pub mod bsde;
pub mod cli;
pub mod error;
pub mod girsanov;
pub mod paths;
pub mod rng;
pub mod solvers;
pub mod stats;
pub mod timechange;

pub use error::{Error, Result};
