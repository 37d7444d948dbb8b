//! Deterministic simulator for decentralized and centralized federated learning
//! with the rewind model-exchange schedule.
//!
//! - [`nn`]: softmax regression / one-hidden-layer MLP with SGD
//! - [`data`]: IDX loading, synthetic blobs, Dirichlet non-IID partitioning
//! - [`federation`]: routing, phase plans, round engine, baselines
//! - [`metrics`]: cross-accuracy matrix, FA / FF / PFA
//! - [`task_stream`]: class-incremental task schedules
//! - [`experiment`]: configuration, runs, result files, alpha sweeps

pub mod data;
mod error;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod task_stream;

pub use error::{Error, Result};
