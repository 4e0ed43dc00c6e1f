//! Optimal control of open-channel flow by homotopy continuation.
//!
//! A channel is discretized on a staggered grid and its momentum equation is
//! blended from a linear model (`θ = 0`) into the nonlinear inertial-wave
//! model (`θ = 1`). The optimal control problem is solved at `θ = 0`, where
//! it is convex, and the solution is continued to `θ = 1` with a
//! log-barrier interior-point method. Diagnostics check the assumptions that
//! make this path well defined and monitor the KKT conditioning along it.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod homotopy;
pub mod hydraulics;
pub mod ipm;
pub mod linalg;
pub mod nlp;
pub mod output;
pub mod problem;
pub mod sparse;

pub use error::{Error, Result};
