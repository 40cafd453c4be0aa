//! Self-supervised recovery of clipped signals.
//!
//! The crate is organised bottom-up: forward operators and data generators,
//! a positively homogeneous MLP, the training losses and loop, a laboratory of
//! identifiability checks, a classical HQS baseline and evaluation metrics.

pub mod baseline_hqs;
pub mod datasets;
pub mod error;
pub mod forward_ops;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod theory_lab;
pub mod trainer;

pub use error::{Error, Result};
