//! Interacting island diffusions and the virgin island model: coefficient
//! models, scale/speed numerics, SDE simulation, excursion trees, the
//! McKean–Vlasov particle solver and the experiment harness.

// NaN-rejecting guards such as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod coefficients;
pub mod config;
pub mod error;
pub mod experiments;
pub mod mean_field;
pub mod quad;
pub mod rng;
pub mod sde_sim;
pub mod stats;
pub mod virgin_island;

pub use error::{Error, Result};
