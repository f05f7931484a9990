//! Clip-level covariance descriptors over optical-flow kinematics and image
//! appearance, with sparse-representation classifiers for action and gesture
//! recognition.
//!
//! The pipeline runs flow estimation ([`flow`]), per-pixel feature extraction
//! ([`features`]), covariance estimation ([`covariance`]), SPD-manifold maps
//! ([`spd`]), and one of three clip classifiers: batch OMP over log
//! descriptors ([`omp`]), tensor sparse coding of the covariances ([`tsc`]),
//! or nearest neighbour ([`classify`]). Clip labels are aggregated per video
//! by majority vote.

pub mod classify;
pub mod config;
pub mod covariance;
pub mod dataset;
pub mod error;
pub mod features;
pub mod flow;
pub mod frame;
pub mod labels;
pub mod omp;
pub mod pipeline;
pub mod pnm;
pub mod spd;
pub mod store;
pub mod synth;
pub mod tsc;

pub use error::{Error, Result};
