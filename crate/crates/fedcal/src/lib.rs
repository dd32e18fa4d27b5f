//! Deterministic single-process simulator of federated learning with
//! post-hoc calibration.
//!
//! The crate trains MLP classifiers across simulated clients with FedAvg,
//! fits order-preserving calibration scalers on client validation data,
//! aligns them via permutation weight matching, and averages them into a
//! global scaler. Calibration quality is measured with binned expected
//! calibration error at both the client (local) and pooled (global) level,
//! against five baseline calibrators.
//!
//! Everything is seeded: a run is a pure function of its configuration.

pub mod error;
pub mod rng;

pub mod linalg;
pub mod mlp;

pub mod data;
pub mod metrics;
pub mod scalers;
pub mod matching;
pub mod fedsim;
pub mod baselines;
pub mod verify;
pub mod harness;

pub use error::{Error, Result};
