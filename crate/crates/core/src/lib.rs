//! Cluster-correlation-expansion simulation of central-spin decoherence in
//! finite spin baths.

pub mod clusters;
pub mod constants;
pub mod couplings;
pub mod engine;
pub mod error;
pub mod hamiltonian;
pub mod spinops;
pub mod structure;

pub use error::{Error, Result};
