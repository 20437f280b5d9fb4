//! Reliability-aware acceptance modelling for Mobility-on-Demand services and
//! simulation-based optimization of the displayed pick-up wait time.
//!
//! - [`dist`]: lognormal wait times and expected pick-up delay
//! - [`choice`]: binary logit acceptance model and survey models
//! - [`estimate`]: maximum-likelihood refitting of the acceptance model
//! - [`network`]: road network and shortest paths
//! - [`sim`]: fleet simulation producing per-node wait-time pmfs
//! - [`optimize`]: percentile enumeration and acceptance-rate comparison
//! - [`cli`]: command-line experiments

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod choice;
pub mod cli;
pub mod dist;
pub mod error;
pub mod estimate;
pub mod network;
pub mod optimize;
pub mod sim;

pub use error::{Error, Result};
