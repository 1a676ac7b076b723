//! Counterfactual comparison of rankers from click logs, and optimization of
//! the logging policy that collects those logs.

pub mod clicks;
pub mod dataset;
pub mod em;
pub mod error;
pub mod estimators;
pub mod flat;
pub mod harness;
pub mod interleaving;
pub mod logopt;
pub mod model;
pub mod oracles;
pub mod policy;
pub mod stats;

pub use error::{Error, Result};

/// Seedable generator used for every stochastic routine in the crate.
pub type RandomStream = rand_chacha::ChaCha8Rng;
