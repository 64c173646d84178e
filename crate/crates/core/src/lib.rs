//! Chance-constrained reciprocal collision avoidance for quadrotor swarms.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chance;
pub mod config;
pub mod error;
pub mod exec;
pub mod flat;
pub mod mpc;
pub mod oracle;
pub mod orca;
pub mod report;
pub mod sim;
pub mod uncertainty;

pub use error::{Error, Result};
