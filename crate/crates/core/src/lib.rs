//! Pricing-based coordination of electric ride-hailing fleet charging.
//!
//! A government sets charging prices as functions of the companies'
//! allocations so that the companies' Nash equilibrium minimises its own
//! loss; each company then steers its drivers to the chosen stations with
//! surge prices. The [`sim`] module generates the game inputs from a
//! simulated operating period and [`harness`] runs the full pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod equilibrium;
pub mod error;
pub mod feasible;
pub mod flow;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod qp;
pub mod robustness;
pub mod sim;
pub mod surge;

pub use error::{Error, Result};
