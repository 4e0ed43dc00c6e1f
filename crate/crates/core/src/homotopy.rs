//! Continuation in the homotopy parameter from the linear model (`θ = 0`)
//! to the nonlinear model (`θ = 1`).

use std::fmt;

use crate::diagnostics::{check_assumptions, StabilityTrace};
use crate::error::{Error, Result};
use crate::ipm::{solve_barrier_sequence, BarrierSolution, IterateObserver, IterateState, SolverOptions};
use crate::nlp::ParametricNlp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomotopyOptions {
    pub theta_step: f64,
    pub theta_step_min: f64,
    /// Halve the step after a failed solve and double it after a success.
    pub adaptive: bool,
    /// Barrier parameter at which warm-started frames enter the schedule.
    /// `None` runs the full schedule in every frame.
    pub warm_mu: Option<f64>,
    /// Record KKT singular values at every accepted iterate.
    pub record_diagnostics: bool,
}

impl Default for HomotopyOptions {
    fn default() -> Self {
        Self {
            theta_step: 0.1,
            theta_step_min: 1e-3,
            adaptive: true,
            warm_mu: None,
            record_diagnostics: true,
        }
    }
}

impl HomotopyOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_step_min > 0.0
            && self.theta_step_min <= self.theta_step
            && self.theta_step <= 1.0)
        {
            return Err(Error::InvalidParameter(format!(
                "theta steps must satisfy 0 < min ({}) <= step ({}) <= 1",
                self.theta_step_min, self.theta_step
            )));
        }
        if let Some(mu) = self.warm_mu.filter(|mu| !(*mu > 0.0)) {
            return Err(Error::InvalidParameter(format!("warm_mu must be positive, got {mu}")));
        }
        Ok(())
    }
}

/// Summary of one barrier subproblem within a path frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub mu: f64,
    pub kkt_residual_inf: f64,
    pub min_singular_value: Option<f64>,
    pub newton_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEntry {
    pub theta: f64,
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub objective: f64,
    pub kkt_residual_norm: f64,
    /// Smallest KKT singular value over all accepted iterates of the frame.
    pub min_singular_value: Option<f64>,
    pub newton_iters: usize,
    pub stages: Vec<StageRecord>,
}

impl PathEntry {
    pub fn state(&self, mu: f64) -> IterateState {
        IterateState::new(self.x.clone(), self.lambda.clone(), mu, self.theta)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathRecord {
    pub entries: Vec<PathEntry>,
}

impl PathRecord {
    pub fn thetas(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.theta).collect()
    }

    pub fn last(&self) -> Option<&PathEntry> {
        self.entries.last()
    }

    /// Entry whose θ is closest to `theta`.
    pub fn nearest(&self, theta: f64) -> Option<&PathEntry> {
        self.entries
            .iter()
            .min_by(|a, b| (a.theta - theta).abs().total_cmp(&(b.theta - theta).abs()))
    }

    pub fn is_complete(&self) -> bool {
        self.last().is_some_and(|e| e.theta == 1.0)
    }
}

/// A path that could not be continued to `θ = 1`.
#[derive(Debug, Clone)]
pub struct PathFailure {
    pub partial: PathRecord,
    /// θ of the subproblem that failed.
    pub failed_at: f64,
    pub reason: String,
}

impl fmt::Display for PathFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "path failed at theta = {} after {} frames: {}",
            self.failed_at,
            self.partial.entries.len(),
            self.reason
        )
    }
}

/// Next step after a solve. Failure halves the step, success doubles it up
/// to the initial step. Returns `None` when the halved step would fall below
/// the minimum.
pub fn adapt_step(step: f64, failed: bool, options: &HomotopyOptions) -> Option<f64> {
    if failed {
        if step <= options.theta_step_min {
            None
        } else {
            Some((0.5 * step).max(options.theta_step_min))
        }
    } else {
        Some((2.0 * step).min(options.theta_step))
    }
}

/// Step actually taken from `theta` so that the path lands exactly on 1.
pub fn clamp_step(theta: f64, step: f64) -> f64 {
    step.min(1.0 - theta)
}

fn snap(theta: f64) -> f64 {
    let t = (theta * 1e12).round() / 1e12;
    t.min(1.0)
}

fn solve_frame(
    nlp: &ParametricNlp,
    theta: f64,
    start: &IterateState,
    solver: &SolverOptions,
    record: bool,
) -> Result<PathEntry> {
    let mut trace = StabilityTrace::default();
    let observer: Option<&mut dyn IterateObserver> = if record { Some(&mut trace) } else { None };
    let BarrierSolution {
        state,
        stages,
        newton_iters,
    } = solve_barrier_sequence(nlp, theta, start, solver, observer)?;
    Ok(PathEntry {
        theta,
        objective: nlp.objective(&state.x),
        kkt_residual_norm: state.kkt_residual_norm,
        min_singular_value: trace.min_singular_value(),
        newton_iters,
        stages: stages
            .iter()
            .map(|s| StageRecord {
                mu: s.mu,
                kkt_residual_inf: s.kkt_residual_inf,
                min_singular_value: trace.min_singular_value_at(theta, s.mu),
                newton_iters: s.newton_iters,
            })
            .collect(),
        x: state.x,
        lambda: state.lambda,
    })
}

fn fail(partial: PathRecord, failed_at: f64, reason: String) -> Error {
    Error::PathFailure(Box::new(PathFailure {
        partial,
        failed_at,
        reason,
    }))
}

fn continue_path(
    nlp: &ParametricNlp,
    solver: &SolverOptions,
    options: &HomotopyOptions,
    mut path: PathRecord,
) -> Result<PathRecord> {
    let mut step = options.theta_step;
    while let Some(last) = path.last().filter(|e| e.theta < 1.0) {
        let theta = snap(last.theta + clamp_step(last.theta, step));
        let start = last.state(options.warm_mu.unwrap_or(solver.mu_init));
        match solve_frame(nlp, theta, &start, solver, options.record_diagnostics) {
            Ok(entry) => {
                path.entries.push(entry);
                if options.adaptive {
                    step = adapt_step(step, false, options).unwrap_or(step);
                }
            }
            Err(e) => {
                let next = if options.adaptive {
                    adapt_step(step, true, options)
                } else {
                    None
                };
                match next {
                    Some(s) => step = s,
                    None => return Err(fail(path, theta, e.to_string())),
                }
            }
        }
    }
    Ok(path)
}

/// Traces the solution path from a cold start at `θ = 0` to `θ = 1`, each
/// frame warm-started from the previous one. On failure the error carries
/// the frames computed so far.
pub fn homotopy_solve(
    nlp: &ParametricNlp,
    solver: &SolverOptions,
    options: &HomotopyOptions,
) -> Result<PathRecord> {
    solver.validate()?;
    options.validate()?;
    if let Some((assumption, detail)) = check_assumptions(nlp).first_failure() {
        return Err(Error::Assumption {
            assumption,
            detail: detail.to_string(),
        });
    }
    let start = IterateState::cold(nlp, solver.mu_init, 0.0);
    let seed = solve_frame(nlp, 0.0, &start, solver, options.record_diagnostics)
        .map_err(|e| fail(PathRecord::default(), 0.0, e.to_string()))?;
    continue_path(nlp, solver, options, PathRecord { entries: vec![seed] })
}

/// Continues a path from a stored frame. The returned record starts with
/// `from`.
pub fn homotopy_resume(
    nlp: &ParametricNlp,
    solver: &SolverOptions,
    options: &HomotopyOptions,
    from: &PathEntry,
) -> Result<PathRecord> {
    solver.validate()?;
    options.validate()?;
    if from.x.len() != nlp.num_variables() || from.lambda.len() != nlp.num_constraints() {
        return Err(Error::Dimension("stored frame does not match the problem".into()));
    }
    continue_path(
        nlp,
        solver,
        options,
        PathRecord {
            entries: vec![from.clone()],
        },
    )
}
