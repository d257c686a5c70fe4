//! Simulation of the random walk with binomial catastrophes, its scaling
//! limits, and the statistics used to check them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chains;
pub mod coupling;
pub mod error;
pub mod limits;
pub mod rng;
pub mod scaling;
pub mod stats;

pub use chains::{ChainKind, ChainParams, DiscretePath};
pub use error::{Error, Result};
pub use rng::{SeedSpec, Stream};
pub use scaling::{Regime, ScalingSchedule};
pub use stats::DistanceReport;
