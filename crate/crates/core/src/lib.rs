//! Hybrid optimization laboratory.
//!
//! A supervisor switches between a fast global momentum flow (Nesterov, or a
//! lightly damped heavy ball) and a heavily damped heavy-ball flow near the
//! minimizer, using hysteresis sets built only from gradient measurements.
//! The crate also carries the individual flows as standalone closed loops, the
//! HAND-1/HAND-2 restarting baselines, a fixed-step hybrid solver with
//! jump-priority semantics, and the Lyapunov/rate/settling measurements used
//! to compare them.

pub mod algorithms;
pub mod analysis;
pub mod baselines;
pub mod error;
pub mod hybrid;
pub mod objective;
pub mod uniting;
pub mod vecops;

pub use error::{Error, Result};
