//! Active fault diagnosis via constrained reinforcement learning.
//!
//! The crate simulates linear plants with multiplicative actuator faults,
//! filters the fault vector with a closed-form Bayesian observer, wraps both
//! into a constrained decision process, and trains excitation policies with
//! a trust-region constrained policy optimizer. A proportional baseline
//! controller and an experiment harness (training, evaluation, threshold
//! sweeps, figure-data export) complete the pipeline.

pub mod baseline;
pub mod cpo;
pub mod diffnet;
pub mod env;
pub mod error;
pub mod experiment;
pub mod exec;
pub mod linsys;
pub mod math;
pub mod observer;
pub mod oracles;

pub use error::{Error, Result};
