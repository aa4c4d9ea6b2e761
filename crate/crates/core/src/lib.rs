//! PRIDE: differentially private distributed estimation over vertically
//! partitioned data.
//!
//! Every party holds a disjoint block of feature columns for the same set of
//! observations. Each party publishes a subsampled randomized Hadamard
//! transform (SRHT) sketch of its block, perturbed with Gaussian noise
//! calibrated so the release satisfies (epsilon, delta)-distributed
//! differential privacy. Parties then solve a local dual problem on their raw
//! block concatenated with the received sketches and recover coefficients for
//! their own features only.
//!
//! The whole protocol runs as a deterministic single-process simulation: all
//! randomness is derived from one master seed through labeled substreams, so
//! repeated runs are bit-identical.

pub mod analysis;
pub mod baselines;
pub mod cv;
pub mod data;
pub mod dual;
pub mod error;
pub mod experiment;
pub mod pride;
pub mod privacy;
pub mod rng;
pub mod synth;
pub mod transform;

pub use error::{PrideError, Result};
