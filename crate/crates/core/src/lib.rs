//! Estimators for the probability that a neural network expresses a given
//! function on a fixed evaluation set: by repeated optimiser training, by
//! Gaussian-process posterior sampling (NNGP and NTK), by expectation
//! propagation with a 0-1 likelihood, and by direct rejection sampling of
//! parameters on small Boolean systems — plus the analyses that compare
//! them.

pub mod abi;
pub mod analysis;
pub mod data;
pub mod error;
pub mod funcspace;
pub mod gp;
pub mod kernel;
pub mod net;
pub mod opt;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
