//! Newton interior-point solver for the barrier subproblems.
//!
//! For a fixed homotopy parameter `θ` the solver drives the barrier residual
//! `F_μ(x, λ, θ) = (∇_x L_μ, c)` to zero for a geometric sequence of barrier
//! parameters. Steps solve the full KKT system; step lengths obey the
//! fraction-to-boundary rule and an Armijo condition on `½‖F_μ‖²`.
//!
//! A singular KKT matrix is reported as [`Error::SingularKkt`] and never
//! regularized away.

use crate::error::{Error, Result};
use crate::linalg::solve_refined;
use crate::nlp::{KktSystem, ParametricNlp};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub mu_init: f64,
    pub mu_factor: f64,
    pub mu_min: f64,
    /// Tolerance on `‖F_μ‖∞` for every barrier subproblem.
    pub tol: f64,
    pub max_newton_iters: usize,
    pub fraction_to_boundary: f64,
    pub armijo: f64,
    /// Relative distance by which a starting point is pushed off its bounds.
    pub bound_push: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            mu_init: 0.1,
            mu_factor: 0.1,
            mu_min: 1e-8,
            tol: 1e-8,
            max_newton_iters: 100,
            fraction_to_boundary: 0.99,
            armijo: 1e-4,
            bound_push: 1e-2,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu_init", self.mu_init),
            ("mu_min", self.mu_min),
            ("tol", self.tol),
            ("armijo", self.armijo),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.mu_min < self.mu_init) {
            return Err(Error::InvalidParameter("mu_min must be below mu_init".into()));
        }
        for (name, v) in [
            ("mu_factor", self.mu_factor),
            ("fraction_to_boundary", self.fraction_to_boundary),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.armijo < 0.5) {
            return Err(Error::InvalidParameter("armijo constant must be below 0.5".into()));
        }
        if !(self.bound_push >= 0.0 && self.bound_push < 0.5) {
            return Err(Error::InvalidParameter("bound_push must lie in [0, 0.5)".into()));
        }
        if self.max_newton_iters == 0 {
            return Err(Error::InvalidParameter("max_newton_iters must be positive".into()));
        }
        Ok(())
    }

    /// Strictly decreasing barrier schedule `μ_init, μ_init·f, …, μ_min`.
    pub fn mu_schedule(&self) -> Vec<f64> {
        let mut schedule = Vec::new();
        let mut mu = self.mu_init;
        while mu > self.mu_min * (1.0 + 1e-9) {
            schedule.push(mu);
            mu *= self.mu_factor;
        }
        schedule.push(self.mu_min);
        schedule
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: f64,
    pub theta: f64,
    pub kkt_residual_norm: f64,
    pub min_singular_value: Option<f64>,
}

impl IterateState {
    /// Cold start: the problem's default interior point with zero multipliers.
    pub fn cold<P: BarrierProblem + ?Sized>(problem: &P, mu: f64, theta: f64) -> Self {
        Self::new(problem.cold_start(), vec![0.0; problem.num_constraints()], mu, theta)
    }

    pub fn new(x: Vec<f64>, lambda: Vec<f64>, mu: f64, theta: f64) -> Self {
        Self {
            x,
            lambda,
            mu,
            theta,
            kkt_residual_norm: f64::NAN,
            min_singular_value: None,
        }
    }
}

/// A bound-constrained, equality-constrained problem in barrier form.
pub trait BarrierProblem {
    fn num_variables(&self) -> usize;
    fn num_constraints(&self) -> usize;
    /// Lower bounds, `-∞` where absent.
    fn lower(&self) -> &[f64];
    /// Upper bounds, `+∞` where absent.
    fn upper(&self) -> &[f64];
    fn objective(&self, x: &[f64]) -> f64;
    fn primal_residual(&self, x: &[f64], lambda: &[f64], mu: f64, theta: f64) -> Result<Vec<f64>>;
    fn kkt(&self, x: &[f64], lambda: &[f64], mu: f64, theta: f64) -> Result<KktSystem>;
    fn cold_start(&self) -> Vec<f64>;
}

impl BarrierProblem for ParametricNlp {
    fn num_variables(&self) -> usize {
        ParametricNlp::num_variables(self)
    }
    fn num_constraints(&self) -> usize {
        ParametricNlp::num_constraints(self)
    }
    fn lower(&self) -> &[f64] {
        ParametricNlp::lower(self)
    }
    fn upper(&self) -> &[f64] {
        ParametricNlp::upper(self)
    }
    fn objective(&self, x: &[f64]) -> f64 {
        ParametricNlp::objective(self, x)
    }
    fn primal_residual(&self, x: &[f64], lambda: &[f64], mu: f64, theta: f64) -> Result<Vec<f64>> {
        ParametricNlp::primal_residual(self, x, lambda, mu, theta)
    }
    fn kkt(&self, x: &[f64], lambda: &[f64], mu: f64, theta: f64) -> Result<KktSystem> {
        self.kkt_matrix(x, lambda, mu, theta)
    }
    fn cold_start(&self) -> Vec<f64> {
        ParametricNlp::cold_start(self)
    }
}

/// Receives every accepted iterate together with its KKT matrix.
pub trait IterateObserver {
    fn observe(&mut self, state: &IterateState, kkt: &SparseMatrix);
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonStep {
    pub dx: Vec<f64>,
    pub dlambda: Vec<f64>,
    /// `‖K d + F‖∞ / ‖F‖∞` of the linear solve.
    pub relative_residual: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

fn solve_kkt(kkt: &KktSystem, state: &IterateState, n: usize) -> Result<NewtonStep> {
    let (d, relative_residual) =
        solve_refined(&kkt.matrix, &kkt.rhs).map_err(|_| Error::SingularKkt {
            theta: state.theta,
            mu: state.mu,
            iterate: Box::new(state.clone()),
        })?;
    if !d.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularKkt {
            theta: state.theta,
            mu: state.mu,
            iterate: Box::new(state.clone()),
        });
    }
    let (dx, dlambda) = d.split_at(n);
    Ok(NewtonStep {
        dx: dx.to_vec(),
        dlambda: dlambda.to_vec(),
        relative_residual,
    })
}

/// Newton direction for `F_μ(x, λ, θ) = 0` at `state`.
pub fn newton_step<P: BarrierProblem + ?Sized>(problem: &P, state: &IterateState) -> Result<NewtonStep> {
    let kkt = problem.kkt(&state.x, &state.lambda, state.mu, state.theta)?;
    solve_kkt(&kkt, state, problem.num_variables())
}

/// Largest `α ∈ (0, 1]` keeping `x + α dx` at least a fraction `1 - τ` of
/// the current distance away from every finite bound.
pub fn fraction_to_boundary(x: &[f64], dx: &[f64], lower: &[f64], upper: &[f64], tau: f64) -> f64 {
    let mut alpha: f64 = 1.0;
    for k in 0..x.len() {
        if dx[k] < 0.0 && lower[k].is_finite() {
            alpha = alpha.min(-tau * (x[k] - lower[k]) / dx[k]);
        }
        if dx[k] > 0.0 && upper[k].is_finite() {
            alpha = alpha.min(tau * (upper[k] - x[k]) / dx[k]);
        }
    }
    alpha
}

/// Backtracking from the fraction-to-boundary step length until
/// `½‖F_μ‖²` satisfies the Armijo condition. Returns the new iterate and
/// the accepted step length.
pub fn line_search_and_update<P: BarrierProblem + ?Sized>(
    problem: &P,
    state: &IterateState,
    step: &NewtonStep,
    options: &SolverOptions,
) -> Result<(IterateState, f64)> {
    let f0 = problem.primal_residual(&state.x, &state.lambda, state.mu, state.theta)?;
    let merit0 = 0.5 * f0.iter().map(|v| v * v).sum::<f64>();
    let mut alpha = fraction_to_boundary(
        &state.x,
        &step.dx,
        problem.lower(),
        problem.upper(),
        options.fraction_to_boundary,
    );
    let (lower, upper) = (problem.lower(), problem.upper());
    while alpha >= 1e-12 {
        let x: Vec<f64> = state.x.iter().zip(&step.dx).map(|(x, d)| x + alpha * d).collect();
        let interior = x
            .iter()
            .enumerate()
            .all(|(k, &v)| v > lower[k] && v < upper[k]);
        if interior {
            let lambda: Vec<f64> = state
                .lambda
                .iter()
                .zip(&step.dlambda)
                .map(|(l, d)| l + alpha * d)
                .collect();
            if let Ok(f) = problem.primal_residual(&x, &lambda, state.mu, state.theta) {
                let merit = 0.5 * f.iter().map(|v| v * v).sum::<f64>();
                if merit.is_finite() && merit <= (1.0 - 2.0 * options.armijo * alpha) * merit0 {
                    let next = IterateState {
                        x,
                        lambda,
                        mu: state.mu,
                        theta: state.theta,
                        kkt_residual_norm: inf_norm(&f),
                        min_singular_value: None,
                    };
                    return Ok((next, alpha));
                }
            }
        }
        alpha *= 0.5;
    }
    Err(Error::LineSearch {
        theta: state.theta,
        mu: state.mu,
    })
}

/// Per-μ summary of a barrier solve.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLog {
    pub mu: f64,
    pub kkt_residual_inf: f64,
    pub newton_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSolution {
    pub state: IterateState,
    pub stages: Vec<StageLog>,
    pub newton_iters: usize,
}

/// Pushes `x` at least `κ·max(1, |bound|)` (capped at `κ` times the bound
/// interval) inside each finite bound.
fn push_inside(x: &mut [f64], lower: &[f64], upper: &[f64], kappa: f64) {
    for k in 0..x.len() {
        let (l, u) = (lower[k], upper[k]);
        let width = u - l;
        if l.is_finite() {
            let mut push = kappa * l.abs().max(1.0);
            if width.is_finite() {
                push = push.min(kappa * width);
            }
            x[k] = x[k].max(l + push);
        }
        if u.is_finite() {
            let mut push = kappa * u.abs().max(1.0);
            if width.is_finite() {
                push = push.min(kappa * width);
            }
            x[k] = x[k].min(u - push);
        }
    }
}

/// Solves the barrier subproblems for `μ` from `mu_init` down to `mu_min`
/// at fixed `θ`, starting from `warm_start`. Schedule entries above the
/// warm start's `μ` are skipped and the bound push shrinks in proportion.
/// Every subproblem is converged to `‖F_μ‖∞ ≤ tol`.
pub fn solve_barrier_sequence<P: BarrierProblem + ?Sized>(
    problem: &P,
    theta: f64,
    warm_start: &IterateState,
    options: &SolverOptions,
    mut observer: Option<&mut dyn IterateObserver>,
) -> Result<BarrierSolution> {
    options.validate()?;
    let n = problem.num_variables();
    let m = problem.num_constraints();
    if warm_start.x.len() != n || warm_start.lambda.len() != m {
        return Err(Error::Dimension(format!(
            "warm start has {} variables and {} multipliers, problem has {n} and {m}",
            warm_start.x.len(),
            warm_start.lambda.len()
        )));
    }
    let schedule: Vec<f64> = options
        .mu_schedule()
        .into_iter()
        .filter(|&mu| mu <= warm_start.mu * (1.0 + 1e-9))
        .collect();
    let schedule = if schedule.is_empty() { vec![options.mu_min] } else { schedule };
    let mut x = warm_start.x.clone();
    let push = options.bound_push * (schedule[0] / options.mu_init);
    push_inside(&mut x, problem.lower(), problem.upper(), push);
    let mut state = IterateState::new(x, warm_start.lambda.clone(), schedule[0], theta);

    let mut stages = Vec::new();
    let mut total = 0;
    for mu in schedule {
        state.mu = mu;
        let mut iters = 0;
        loop {
            let kkt = problem.kkt(&state.x, &state.lambda, mu, theta)?;
            // The right-hand side is -F_μ.
            state.kkt_residual_norm = inf_norm(&kkt.rhs);
            if let Some(obs) = observer.as_deref_mut() {
                obs.observe(&state, &kkt.matrix);
            }
            if state.kkt_residual_norm <= options.tol {
                break;
            }
            if iters == options.max_newton_iters {
                return Err(Error::NonConvergence {
                    theta,
                    mu,
                    iterations: iters,
                });
            }
            let step = solve_kkt(&kkt, &state, n)?;
            let (next, _) = line_search_and_update(problem, &state, &step, options)?;
            state = next;
            iters += 1;
        }
        total += iters;
        stages.push(StageLog {
            mu,
            kkt_residual_inf: state.kkt_residual_norm,
            newton_iters: iters,
        });
    }
    Ok(BarrierSolution {
        state,
        stages,
        newton_iters: total,
    })
}
