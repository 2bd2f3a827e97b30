//! Excited random walks in cookie environments on Z^d: simulation, cut times
//! of the vertical walk, change-of-measure weights and speed estimators.

pub mod cuts;
pub mod environment;
pub mod error;
pub mod estimators;
pub mod girsanov;
pub mod lattice;
pub mod oracle;
pub mod parallel;
pub mod rng;
pub mod sites;
pub mod stats;
pub mod walker;

pub use error::{Error, Result};
