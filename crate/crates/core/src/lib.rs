//! Seed bank coalescent and diffusion scaling limits.
//!
//! Rate matrices of the block-counting process and its separated-time-scale
//! limit, degenerate semigroups `P e^{tG}`, simulators for the frequency
//! diffusions and their jump limits, and numerical duality and convergence checks.

// `!(x >= 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod duality;
pub mod error;
pub mod markov;
pub mod models;
pub mod report;
pub mod timescale;
pub mod tolerance;

pub use error::{Error, Result};
