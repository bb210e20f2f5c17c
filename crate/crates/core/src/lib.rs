//! Fine-grained gradient compression and energy-aware resource allocation
//! for federated learning on mobile edge devices.
//!
//! * [`grad`]: gradient tensors and a seeded synthetic generator.
//! * [`codec`]: kernel-wise sparsification, stochastic quantization and the
//!   bit-exact record format.
//! * [`aggregate`]: masked, data-weighted element-wise aggregation.
//! * [`perf`]: accuracy, rate, latency, energy and goal models.
//! * [`optimizer`]: per-device compression ratio and CPU frequency solver,
//!   plus the Random, Uniform and Selection baselines.
//! * [`fedsim`]: scenario sampling, modeled rounds and a small end-to-end
//!   trainer that runs through the codec.
//! * [`cli`]: config parsing, CSV output and the command runner behind the
//!   `fedgreen` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod cli;
pub mod codec;
pub mod error;
pub mod fedsim;
pub mod grad;
pub mod optimizer;
pub mod perf;
pub mod rng;

pub use error::{Error, Result};
