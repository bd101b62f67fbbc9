//! Measurement-error mitigation for qubit readout.
//!
//! The crate bundles a synthetic noisy-readout device ([`simulator`]), data
//! generation ([`dataset`]), four mitigators (linear inversion in [`li`], and
//! the full-joint, conditional-independence and transfer-learned networks in
//! [`ci`]), distance metrics ([`metrics`]) and an experiment runner
//! ([`harness`]).

pub mod ci;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod li;
pub mod metrics;
pub mod mlp;
pub mod presets;
pub mod probdist;
pub mod rng;
mod sig17;
pub mod simulator;
pub mod topology;

pub use ci::{CiModel, TrainConfig};
pub use dataset::{Dataset, Sample};
pub use error::{Error, Result};
pub use mlp::{AdamConfig, AdamState, Mlp, Schedule};
pub use probdist::{BitString, ProbDist};
pub use simulator::{AngleVector, NoiseModel};
pub use topology::{CouplingGraph, Leaf, PartitionSpec};
