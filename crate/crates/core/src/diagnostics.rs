//! Numerical checks of the structural assumptions and of the convexity and
//! stability properties the homotopy method relies on.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hydraulics::NodeKind;
use crate::ipm::{IterateObserver, IterateState};
use crate::linalg::{numerical_rank, singular_values};
use crate::nlp::{ParametricNlp, VarKey};
use crate::sparse::SparseMatrix;

/// Smallest KKT singular value below which a critical point is suspected.
pub const SINGULAR_VALUE_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Assumption {
    /// Every variable is bounded on at least one side, levels from below by
    /// the bottom.
    Bnd,
    /// Initial conditions are given and wet.
    Ico,
    /// Level boundaries carry a fixed series.
    Hbc,
    /// Quadratic weights are strictly positive.
    Obj,
    /// Extra constraints are affine.
    Lin,
    /// Constraint gradients are linearly independent.
    Ind,
}

impl Assumption {
    pub const ALL: [Assumption; 6] = [
        Assumption::Bnd,
        Assumption::Ico,
        Assumption::Hbc,
        Assumption::Obj,
        Assumption::Lin,
        Assumption::Ind,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Assumption::Bnd => "BND",
            Assumption::Ico => "ICO",
            Assumption::Hbc => "HBC",
            Assumption::Obj => "OBJ",
            Assumption::Lin => "LIN",
            Assumption::Ind => "IND",
        }
    }
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail(String),
}

impl CheckStatus {
    pub fn passed(&self) -> bool {
        matches!(self, CheckStatus::Pass)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssumptionReport {
    entries: Vec<(Assumption, CheckStatus)>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|(_, s)| s.passed())
    }

    pub fn entries(&self) -> &[(Assumption, CheckStatus)] {
        &self.entries
    }

    pub fn status(&self, assumption: Assumption) -> &CheckStatus {
        &self
            .entries
            .iter()
            .find(|(a, _)| *a == assumption)
            .expect("every assumption is checked")
            .1
    }

    pub fn failures(&self) -> Vec<Assumption> {
        self.entries
            .iter()
            .filter(|(_, s)| !s.passed())
            .map(|(a, _)| *a)
            .collect()
    }

    pub fn first_failure(&self) -> Option<(Assumption, &str)> {
        self.entries.iter().find_map(|(a, s)| match s {
            CheckStatus::Pass => None,
            CheckStatus::Fail(detail) => Some((*a, detail.as_str())),
        })
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (a, s) in &self.entries {
            match s {
                CheckStatus::Pass => writeln!(f, "{a}: pass")?,
                CheckStatus::Fail(detail) => writeln!(f, "{a}: FAIL ({detail})")?,
            }
        }
        write!(f, "overall: {}", if self.passed() { "pass" } else { "FAIL" })
    }
}

fn status(failures: Vec<String>) -> CheckStatus {
    if failures.is_empty() {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail(failures.join("; "))
    }
}

fn check_bounds(nlp: &ParametricNlp) -> CheckStatus {
    let bottom = nlp.params().bottom_level;
    let mut failures = Vec::new();
    for (k, var) in nlp.variables().iter().enumerate() {
        let (l, u) = (nlp.lower()[k], nlp.upper()[k]);
        if !l.is_finite() && !u.is_finite() {
            failures.push(format!("{} has no bound", nlp.variable_name(k)));
            continue;
        }
        if let VarKey::State(s) = var.key {
            if nlp.topology().kind(s.node) == NodeKind::Level && !(l >= bottom) {
                failures.push(format!(
                    "{} lacks a lower bound at or above the bottom level",
                    nlp.variable_name(k)
                ));
            }
        }
    }
    status(failures)
}

fn check_initial_conditions(nlp: &ParametricNlp) -> CheckStatus {
    let topo = nlp.topology();
    let bottom = nlp.params().bottom_level;
    let mut failures = Vec::new();
    for (node, n) in topo.nodes().iter().enumerate() {
        let needed = n.kind == NodeKind::Level || topo.is_interior(node);
        match nlp.initial()[node] {
            None if needed => failures.push(format!("{} has no initial value", n.name)),
            Some(h) if n.kind == NodeKind::Level && !(h > bottom) => {
                failures.push(format!("{} is dry at t0 ({h} <= {bottom})", n.name))
            }
            _ => {}
        }
    }
    status(failures)
}

fn check_level_boundaries(nlp: &ParametricNlp) -> CheckStatus {
    match nlp.has_free_level_boundary() {
        Some(node) => CheckStatus::Fail(format!(
            "level boundary {} has no fixed series",
            nlp.topology().nodes()[node].name
        )),
        None => CheckStatus::Pass,
    }
}

fn check_objective(nlp: &ParametricNlp) -> CheckStatus {
    status(
        nlp.quadratic_terms()
            .iter()
            .filter(|q| !(q.weight > 0.0))
            .map(|q| format!("{} has quadratic weight {}", nlp.variable_name(q.index), q.weight))
            .collect(),
    )
}

fn extra_row_values(nlp: &ParametricNlp, x: &[f64]) -> Vec<f64> {
    nlp.extra_rows()
        .iter()
        .map(|row| {
            let mut v = row.constant;
            for &(k, a) in &row.linear {
                v += a * x[k];
            }
            for &(p, q, b) in &row.products {
                v += b * x[p] * x[q];
            }
            v
        })
        .collect()
}

fn check_linearity(nlp: &ParametricNlp, rng: &mut ChaCha8Rng) -> CheckStatus {
    let mut failures: Vec<String> = nlp
        .extra_rows()
        .iter()
        .enumerate()
        .filter(|(_, row)| !row.products.is_empty())
        .map(|(i, row)| format!("extra row {i} (constraint {}) has product terms", row.source))
        .collect();
    // Midpoint test: an affine row satisfies c((x+y)/2) = (c(x)+c(y))/2.
    for _ in 0..3 {
        let x = sample_interior_point(nlp, rng);
        let y = sample_interior_point(nlp, rng);
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let (cx, cy, cm) = (
            extra_row_values(nlp, &x),
            extra_row_values(nlp, &y),
            extra_row_values(nlp, &mid),
        );
        for i in 0..cm.len() {
            let expected = 0.5 * (cx[i] + cy[i]);
            let scale = cx[i].abs().max(cy[i].abs()).max(1.0);
            if (cm[i] - expected).abs() > 1e-10 * scale {
                let msg = format!("extra row {i} fails the midpoint test");
                if !failures.contains(&msg) {
                    failures.push(msg);
                }
            }
        }
    }
    status(failures)
}

fn check_independence(nlp: &ParametricNlp) -> CheckStatus {
    let x = nlp.cold_start();
    let jac = match nlp.constraint_jacobian(&x, 0.0) {
        Ok(j) => j.to_dense(),
        Err(e) => return CheckStatus::Fail(format!("Jacobian unavailable at the start point: {e}")),
    };
    let rank = numerical_rank(&jac);
    if rank < nlp.num_constraints() {
        CheckStatus::Fail(format!(
            "constraint Jacobian has rank {rank}, expected {}",
            nlp.num_constraints()
        ))
    } else {
        CheckStatus::Pass
    }
}

/// Checks all six assumptions on a built (unchecked) problem. The random
/// points of the linearity test use a fixed seed.
pub fn check_assumptions(nlp: &ParametricNlp) -> AssumptionReport {
    check_assumptions_seeded(nlp, 0)
}

pub fn check_assumptions_seeded(nlp: &ParametricNlp, seed: u64) -> AssumptionReport {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AssumptionReport {
        entries: vec![
            (Assumption::Bnd, check_bounds(nlp)),
            (Assumption::Ico, check_initial_conditions(nlp)),
            (Assumption::Hbc, check_level_boundaries(nlp)),
            (Assumption::Obj, check_objective(nlp)),
            (Assumption::Lin, check_linearity(nlp, &mut rng)),
            (Assumption::Ind, check_independence(nlp)),
        ],
    }
}

/// Draws a point uniformly from the bound box shrunk by 1% of its width on
/// each side. One-sided bounds use a box of width 2 next to the bound, free
/// variables the interval [-1, 1].
pub fn sample_interior_point(nlp: &ParametricNlp, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..nlp.num_variables())
        .map(|k| {
            let (l, u) = (nlp.lower()[k], nlp.upper()[k]);
            let (l, u) = match (l.is_finite(), u.is_finite()) {
                (true, true) => (l, u),
                (true, false) => (l, l + 2.0),
                (false, true) => (u - 2.0, u),
                (false, false) => (-1.0, 1.0),
            };
            let margin = 0.01 * (u - l);
            rng.gen_range(l + margin..=u - margin)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroConvexityReport {
    /// Largest central-difference constraint second derivative at `θ = 0`.
    pub constraint_curvature: f64,
    /// Largest off-diagonal objective second derivative.
    pub objective_off_diagonal: f64,
    pub objective_min_diagonal: f64,
    pub points: usize,
}

impl ZeroConvexityReport {
    pub fn constraints_affine(&self) -> bool {
        self.constraint_curvature <= 1e-8
    }

    pub fn objective_convex(&self) -> bool {
        self.objective_off_diagonal <= 1e-8 && self.objective_min_diagonal >= 0.0
    }

    pub fn passed(&self) -> bool {
        self.constraints_affine() && self.objective_convex()
    }
}

const CURVATURE_STEP: f64 = 1e-5;

/// Largest entry of the central-difference second derivatives of every
/// constraint at `x`, computed from the analytic Jacobian.
pub fn constraint_curvature(nlp: &ParametricNlp, x: &[f64], theta: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let h = CURVATURE_STEP * x[k].abs().max(1.0);
        xp[k] = x[k] + h;
        let jp = nlp.constraint_jacobian(&xp, theta)?;
        xp[k] = x[k] - h;
        let jm = nlp.constraint_jacobian(&xp, theta)?;
        xp[k] = x[k];
        // Both matrices share one sparsity pattern.
        for (a, b) in jp.entries().iter().zip(jm.entries()) {
            worst = worst.max(((a.2 - b.2) / (2.0 * h)).abs());
        }
    }
    Ok(worst)
}

/// Checks that the `θ = 0` problem is convex: constraints without curvature
/// at five random interior points and a diagonal, nonnegative objective
/// Hessian.
pub fn verify_zero_convexity(nlp: &ParametricNlp, seed: u64) -> Result<ZeroConvexityReport> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = 5;
    let mut report = ZeroConvexityReport {
        constraint_curvature: 0.0,
        objective_off_diagonal: 0.0,
        objective_min_diagonal: f64::INFINITY,
        points,
    };
    let n = nlp.num_variables();
    for _ in 0..points {
        let x = sample_interior_point(nlp, &mut rng);
        report.constraint_curvature = report.constraint_curvature.max(constraint_curvature(nlp, &x, 0.0)?);
        let mut xp = x.clone();
        for k in 0..n {
            let h = CURVATURE_STEP * x[k].abs().max(1.0);
            xp[k] = x[k] + h;
            let gp = nlp.objective_gradient(&xp);
            xp[k] = x[k] - h;
            let gm = nlp.objective_gradient(&xp);
            xp[k] = x[k];
            for i in 0..n {
                let d = (gp[i] - gm[i]) / (2.0 * h);
                if i == k {
                    report.objective_min_diagonal = report.objective_min_diagonal.min(d);
                } else {
                    report.objective_off_diagonal = report.objective_off_diagonal.max(d.abs());
                }
            }
        }
    }
    if n == 0 {
        report.objective_min_diagonal = 0.0;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    /// Largest half-bandwidth over the per-step hydraulic blocks.
    pub step_bandwidth: usize,
    /// Smallest singular value over the per-step hydraulic blocks.
    pub step_min_singular_value: f64,
    pub steps_nonsingular: bool,
    pub hydraulic_rank: usize,
    pub hydraulic_rows: usize,
    /// Largest magnitude in the Hessian blocks coupling `x_hyd` and `x_oth`.
    pub cross_block_max: f64,
    /// Largest off-diagonal magnitude within the `x_oth` Hessian block.
    pub other_off_diagonal_max: f64,
    pub other_min_diagonal: f64,
}

impl StructureReport {
    pub fn tridiagonal_steps(&self) -> bool {
        self.step_bandwidth <= 1 && self.steps_nonsingular
    }

    pub fn full_hydraulic_rank(&self) -> bool {
        self.hydraulic_rank == self.hydraulic_rows
    }

    pub fn hessian_blocks(&self) -> bool {
        self.cross_block_max == 0.0 && self.other_off_diagonal_max == 0.0 && self.other_min_diagonal > 0.0
    }

    pub fn passed(&self) -> bool {
        self.tridiagonal_steps() && self.full_hydraulic_rank() && self.hessian_blocks()
    }
}

/// Verifies the block structure behind path stability at a wet interior
/// point: tridiagonal, nonsingular per-step hydraulic Jacobian blocks, a full
/// rank hydraulic block, and a Lagrangian Hessian whose `x_oth` block is
/// positive diagonal and decoupled from `x_hyd`.
pub fn check_structure(
    nlp: &ParametricNlp,
    x: &[f64],
    lambda: &[f64],
    mu: f64,
    theta: f64,
) -> Result<StructureReport> {
    let bottom = nlp.params().bottom_level;
    let traj = nlp.trajectory(x);
    for (node, row) in traj.values.iter().enumerate() {
        if nlp.topology().kind(node) != NodeKind::Level {
            continue;
        }
        for (time, &h) in row.iter().enumerate() {
            if h.is_finite() && !(h > bottom) {
                return Err(Error::DryReach { node, time });
            }
        }
    }

    let jac = nlp.constraint_jacobian(x, theta)?;
    let nh = nlp.num_hydraulic();
    let rows = nlp.hydraulic_rows().len();
    let steps = nlp.params().steps;
    let per_step = rows / steps;

    let mut blocks = vec![DMatrix::<f64>::zeros(per_step, per_step); steps];
    let mut hydraulic = DMatrix::<f64>::zeros(rows, nh);
    let mut bandwidth = 0;
    for &(r, c, v) in jac.entries() {
        if r >= rows || c >= nh {
            continue;
        }
        hydraulic[(r, c)] = v;
        let (tr, tc) = (r / per_step, c / per_step);
        if tr == tc {
            let (i, j) = (r % per_step, c % per_step);
            blocks[tr][(i, j)] = v;
            if v != 0.0 {
                bandwidth = bandwidth.max(i.abs_diff(j));
            }
        }
    }
    let mut min_sv = f64::INFINITY;
    let mut nonsingular = true;
    for block in &blocks {
        let sv = singular_values(block);
        min_sv = min_sv.min(sv[0]);
        nonsingular &= numerical_rank(block) == per_step;
    }

    let hess = nlp.lagrangian_hessian(x, lambda, mu, theta)?;
    let mut cross: f64 = 0.0;
    let mut other_off: f64 = 0.0;
    let mut other_diag = vec![0.0; nlp.num_variables() - nh];
    for &(r, c, v) in hess.entries() {
        match (r < nh, c < nh) {
            (true, true) => {}
            (false, false) if r == c => other_diag[r - nh] = v,
            (false, false) => other_off = other_off.max(v.abs()),
            _ => cross = cross.max(v.abs()),
        }
    }

    Ok(StructureReport {
        step_bandwidth: bandwidth,
        step_min_singular_value: min_sv,
        steps_nonsingular: nonsingular,
        hydraulic_rank: numerical_rank(&hydraulic),
        hydraulic_rows: rows,
        cross_block_max: cross,
        other_off_diagonal_max: other_off,
        other_min_diagonal: other_diag.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilitySample {
    pub theta: f64,
    pub mu: f64,
    pub min_singular_value: f64,
    /// `σ_max / σ_min`.
    pub condition: f64,
}

impl StabilitySample {
    pub fn from_kkt(theta: f64, mu: f64, kkt: &SparseMatrix) -> Self {
        let sv = singular_values(&kkt.to_dense());
        let min = sv.first().copied().unwrap_or(0.0);
        let max = sv.last().copied().unwrap_or(0.0);
        Self {
            theta,
            mu,
            min_singular_value: min,
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        }
    }

    pub fn flagged(&self) -> bool {
        !(self.min_singular_value >= SINGULAR_VALUE_THRESHOLD)
    }
}

/// KKT conditioning at a sequence of iterates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StabilityTrace {
    pub samples: Vec<StabilitySample>,
}

impl StabilityTrace {
    /// Samples whose smallest singular value suggests a critical point.
    pub fn flagged(&self) -> Vec<&StabilitySample> {
        self.samples.iter().filter(|s| s.flagged()).collect()
    }

    pub fn min_singular_value(&self) -> Option<f64> {
        self.samples.iter().map(|s| s.min_singular_value).reduce(f64::min)
    }

    /// Smallest singular value over the samples taken at `(theta, mu)`.
    pub fn min_singular_value_at(&self, theta: f64, mu: f64) -> Option<f64> {
        self.samples
            .iter()
            .filter(|s| s.theta == theta && s.mu == mu)
            .map(|s| s.min_singular_value)
            .reduce(f64::min)
    }
}

impl IterateObserver for StabilityTrace {
    fn observe(&mut self, state: &IterateState, kkt: &SparseMatrix) {
        self.samples.push(StabilitySample::from_kkt(state.theta, state.mu, kkt));
    }
}

/// Builds a trace from `(θ, μ, KKT matrix)` samples.
pub fn monitor_stability<'a, I>(samples: I) -> StabilityTrace
where
    I: IntoIterator<Item = (f64, f64, &'a SparseMatrix)>,
{
    StabilityTrace {
        samples: samples
            .into_iter()
            .map(|(theta, mu, kkt)| StabilitySample::from_kkt(theta, mu, kkt))
            .collect(),
    }
}
