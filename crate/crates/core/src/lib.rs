//! Sensor-fault-tolerant reconfiguration for interconnected multi-machine
//! power systems.
//!
//! The crate covers the nonlinear plant ([`power`]), observability analysis
//! and augmentation cost ([`observability`]), adaptive high-gain observers
//! ([`observer`]), fault accommodation ([`reconfig`]) and a deterministic
//! closed-loop simulator ([`sim`]). Subsystem ids in the public API are
//! 1-based.

// `!(x > 0.0)` is how parameter checks reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod observability;
pub mod observer;
pub mod power;
pub mod reconfig;
pub mod sim;

pub use error::{Error, Result};
