use thiserror::Error;

use crate::diagnostics::Assumption;
use crate::homotopy::PathFailure;
use crate::ipm::IterateState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("dry reach at node {node}, time index {time}")]
    DryReach { node: usize, time: usize },

    #[error("forward simulation did not converge at time index {time} (residual {residual:.3e})")]
    SimulationDiverged { time: usize, residual: f64 },

    #[error("assumption {assumption} violated: {detail}")]
    Assumption { assumption: Assumption, detail: String },

    #[error("point is not strictly interior to the bounds of variable {index}")]
    NotInterior { index: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("KKT matrix is singular at theta = {theta}, mu = {mu:e} (suspected critical point)")]
    SingularKkt {
        theta: f64,
        mu: f64,
        iterate: Box<IterateState>,
    },

    #[error("line search failed at theta = {theta}, mu = {mu:e}")]
    LineSearch { theta: f64, mu: f64 },

    #[error("barrier subproblem at theta = {theta}, mu = {mu:e} did not converge in {iterations} Newton iterations")]
    NonConvergence {
        theta: f64,
        mu: f64,
        iterations: usize,
    },

    #[error("homotopy path failed at theta = {}: {}", .0.failed_at, .0.reason)]
    PathFailure(Box<PathFailure>),

    #[error("problem document: {0}")]
    Document(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
