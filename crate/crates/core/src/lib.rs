//! Simulation of low-precision transformer training with per-layer
//! quantization points, an adaptive stashing-precision schedule, and an
//! analytic model of arithmetic and DRAM-traffic cost.

pub mod costmodel;
pub mod engine;
mod error;
pub mod formats;
pub mod qtraining;
pub mod scheduler;

pub use error::{Error, Result};
