//! Simulation of jump-driven stochastic differential equations with a
//! decreasing-step truncated Euler scheme, together with the tools used to
//! check it: tail truncation, Malliavin diagnostics, empirical distances and
//! convergence studies.

pub mod cli;
pub mod distance;
pub mod error;
pub mod harness;
pub mod integrator;
pub mod malliavin;
pub mod model;
pub mod quad;
pub mod sampler;
pub mod steps;

pub use error::{Error, Result};
