//! Multi-asset basket option pricing on a decorrelated finite-difference
//! grid with exponential time differencing.
//!
//! Pipeline: [`transform`] removes cross derivatives, [`grid`] and
//! [`operator`] semi-discretise in space, [`stability`] checks the step
//! sizes, [`expo`] and [`stepper`] march in time, and [`cli`] ties the
//! pieces to configuration files. [`oracles`] holds independent reference
//! pricers.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod expo;
pub mod grid;
pub mod model;
pub mod operator;
pub mod oracles;
pub mod stability;
pub mod stepper;
pub mod transform;

pub use error::{Error, Result};
