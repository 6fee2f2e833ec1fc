//! Physics-informed echo state networks for reconstructing unmeasured
//! states of chaotic systems.
//!
//! The reservoir is driven by the observed components; its exact time
//! derivative is carried alongside the state by a closed-form tangent
//! recursion, so the readout's derivative can be compared against the
//! governing equations without finite-difference error.

pub mod dual;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod ode;
pub mod reservoir;
pub mod training;

pub use error::{Error, Result};
