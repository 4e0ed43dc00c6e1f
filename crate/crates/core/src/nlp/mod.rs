//! Flattening of a channel control problem into the parametric standard form
//!
//! ```text
//!     min f(x)   s.t.   c(x, θ) = 0,   x_L ≤ x ≤ x_U
//! ```
//!
//! and evaluation of its log-barrier form. Variables are ordered time-major,
//! then by node along the channel, interior hydraulic variables (`x_hyd`)
//! first, followed by the other variables (`x_oth`: controlled boundary
//! discharges, free level boundaries, slacks). Initial conditions and
//! prescribed boundary series are substituted as data.

mod eval;

pub use eval::{log_barrier, KktSystem};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydraulics::{
    BoundaryKind, ChannelInputs, GridTopology, HydraulicParameters, NodeKind, StateTrajectory,
    StateView,
};

/// A hydraulic value at one node and time index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateRef {
    pub node: usize,
    pub time: usize,
}

impl StateRef {
    pub fn new(node: usize, time: usize) -> Self {
        Self { node, time }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticTerm {
    pub var: StateRef,
    pub weight: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearTerm {
    pub var: StateRef,
    pub coefficient: f64,
}

/// `Σ a_k (x_k - t_k)² + Σ b_l x_l`, independent of θ.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectiveSpec {
    pub quadratic: Vec<QuadraticTerm>,
    pub linear: Vec<LinearTerm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    LessEqual,
    #[serde(rename = "=")]
    Equal,
    #[serde(rename = ">=")]
    GreaterEqual,
}

/// `Σ a_i x_i  (≤ | = | ≥)  rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraint {
    pub terms: Vec<(StateRef, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSpec {
    pub var: StateRef,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Everything needed to build the optimization problem of one channel.
#[derive(Debug, Clone)]
pub struct ChannelProblem {
    pub topology: GridTopology,
    pub params: HydraulicParameters,
    pub inputs: ChannelInputs,
    pub objective: ObjectiveSpec,
    pub constraints: Vec<AffineConstraint>,
    pub bounds: Vec<BoundSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKey {
    State(StateRef),
    Slack(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variable {
    pub key: VarKey,
    pub hydraulic: bool,
}

/// Constraint row `Σ a_i x_i + Σ b_k x_p x_q + constant = 0`.
///
/// Rows built from the problem description never carry products; they
/// exist so that non-affine rows can be represented and rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub linear: Vec<(usize, f64)>,
    pub products: Vec<(usize, usize, f64)>,
    pub constant: f64,
    /// Index of the originating user constraint.
    pub source: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HydraulicRow {
    MassBalance { node: usize, time: usize },
    Momentum { node: usize, time: usize },
}

/// Objective term over a flat variable index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatQuadratic {
    pub index: usize,
    pub weight: f64,
    pub target: f64,
}

#[derive(Debug, Clone)]
pub struct ParametricNlp {
    topology: GridTopology,
    params: HydraulicParameters,
    initial: Vec<Option<f64>>,
    /// Prescribed values per node and time index, `None` where the value is
    /// a variable or unknown.
    fixed: Vec<Vec<Option<f64>>>,
    index: Vec<Vec<Option<usize>>>,
    variables: Vec<Variable>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    num_hydraulic: usize,
    hydraulic_rows: Vec<HydraulicRow>,
    extra_rows: Vec<ConstraintRow>,
    quadratic: Vec<FlatQuadratic>,
    linear: Vec<(usize, f64)>,
    objective_constant: f64,
    theta_pin: Option<f64>,
}

fn is_free_level_boundary(
    topology: &GridTopology,
    inputs: &ChannelInputs,
    steps: usize,
    node: usize,
) -> bool {
    let n = &topology.nodes()[node];
    n.kind == NodeKind::Level
        && !topology.is_interior(node)
        && !(n.boundary == Some(BoundaryKind::LevelBoundary)
            && inputs.series[node].as_ref().is_some_and(|s| s.len() == steps))
}

impl ParametricNlp {
    /// Flattens `problem` without enforcing the structural assumptions.
    /// [`assemble`] is the checked entry point.
    pub fn build(problem: &ChannelProblem) -> Result<Self> {
        let ChannelProblem {
            topology,
            params,
            inputs,
            ..
        } = problem;
        params.validate()?;
        let steps = params.steps;
        let n = topology.len();
        if inputs.initial.len() != n || inputs.series.len() != n {
            return Err(Error::Dimension(format!(
                "channel inputs cover {} / {} nodes, grid has {n}",
                inputs.initial.len(),
                inputs.series.len()
            )));
        }

        let mut fixed = vec![vec![None; steps + 1]; n];
        for node in 0..n {
            fixed[node][0] = inputs.initial[node];
            if let Some(series) = &inputs.series[node] {
                if series.len() != steps {
                    return Err(Error::Dimension(format!(
                        "boundary series of node {} has {} values, expected {steps}",
                        topology.nodes()[node].name,
                        series.len()
                    )));
                }
            }
        }

        let mut index = vec![vec![None; steps + 1]; n];
        let mut variables = Vec::new();
        for j in 1..=steps {
            for node in topology.interior_nodes() {
                index[node][j] = Some(variables.len());
                variables.push(Variable {
                    key: VarKey::State(StateRef::new(node, j)),
                    hydraulic: true,
                });
            }
        }
        let num_hydraulic = variables.len();

        let mut free_ends = Vec::new();
        for node in topology.boundary_nodes() {
            let boundary = topology.nodes()[node].boundary;
            let series = inputs.series[node].as_ref();
            match topology.kind(node) {
                NodeKind::Discharge => match boundary {
                    Some(BoundaryKind::FlowBoundaryControl) => free_ends.push(node),
                    _ => {
                        let series = series.ok_or_else(|| {
                            Error::InvalidParameter(format!(
                                "fixed flow boundary {} has no series",
                                topology.nodes()[node].name
                            ))
                        })?;
                        for j in 1..=steps {
                            fixed[node][j] = Some(series[j - 1]);
                        }
                    }
                },
                NodeKind::Level => {
                    if is_free_level_boundary(topology, inputs, steps, node) {
                        free_ends.push(node);
                    } else if let Some(series) = series {
                        for j in 1..=steps {
                            fixed[node][j] = Some(series[j - 1]);
                        }
                    }
                }
            }
        }
        free_ends.sort_unstable();
        free_ends.dedup();
        for j in 1..=steps {
            for &node in &free_ends {
                index[node][j] = Some(variables.len());
                variables.push(Variable {
                    key: VarKey::State(StateRef::new(node, j)),
                    hydraulic: false,
                });
            }
        }

        let mut nlp = Self {
            topology: topology.clone(),
            params: *params,
            initial: inputs.initial.clone(),
            fixed,
            index,
            lower: vec![f64::NEG_INFINITY; variables.len()],
            upper: vec![f64::INFINITY; variables.len()],
            variables,
            num_hydraulic,
            hydraulic_rows: Vec::new(),
            extra_rows: Vec::new(),
            quadratic: Vec::new(),
            linear: Vec::new(),
            objective_constant: 0.0,
            theta_pin: None,
        };

        for j in 1..=steps {
            for node in topology.interior_nodes() {
                nlp.hydraulic_rows.push(match topology.kind(node) {
                    NodeKind::Level => HydraulicRow::MassBalance { node, time: j },
                    NodeKind::Discharge => HydraulicRow::Momentum { node, time: j },
                });
            }
        }

        for b in &problem.bounds {
            let k = nlp.require_variable(b.var, "bound")?;
            if let Some(l) = b.lower {
                nlp.lower[k] = nlp.lower[k].max(l);
            }
            if let Some(u) = b.upper {
                nlp.upper[k] = nlp.upper[k].min(u);
            }
        }

        for (source, c) in problem.constraints.iter().enumerate() {
            nlp.add_constraint(source, c)?;
        }

        for q in &problem.objective.quadratic {
            match nlp.variable_index(q.var)? {
                Some(k) => nlp.quadratic.push(FlatQuadratic {
                    index: k,
                    weight: q.weight,
                    target: q.target,
                }),
                None => {
                    let v = nlp.fixed_value(q.var)?;
                    nlp.objective_constant += q.weight * (v - q.target).powi(2);
                }
            }
        }
        for l in &problem.objective.linear {
            match nlp.variable_index(l.var)? {
                Some(k) => nlp.linear.push((k, l.coefficient)),
                None => nlp.objective_constant += l.coefficient * nlp.fixed_value(l.var)?,
            }
        }

        for k in 0..nlp.variables.len() {
            if nlp.lower[k] >= nlp.upper[k] {
                return Err(Error::InvalidParameter(format!(
                    "variable {} has empty bound interval [{}, {}]",
                    nlp.variable_name(k),
                    nlp.lower[k],
                    nlp.upper[k]
                )));
            }
        }
        Ok(nlp)
    }

    fn add_constraint(&mut self, source: usize, c: &AffineConstraint) -> Result<()> {
        let mut linear: Vec<(usize, f64)> = Vec::new();
        let mut constant = -c.rhs;
        for &(var, coef) in &c.terms {
            match self.variable_index(var)? {
                Some(k) => match linear.iter_mut().find(|(i, _)| *i == k) {
                    Some(entry) => entry.1 += coef,
                    None => linear.push((k, coef)),
                },
                None => constant += coef * self.fixed_value(var)?,
            }
        }
        linear.retain(|&(_, a)| a != 0.0);

        // A one-variable inequality is a simple bound.
        if let ([(k, a)], true) = (linear.as_slice(), c.relation != Relation::Equal) {
            let (k, a) = (*k, *a);
            let value = -constant / a;
            let upper = (c.relation == Relation::LessEqual) == (a > 0.0);
            if upper {
                self.upper[k] = self.upper[k].min(value);
            } else {
                self.lower[k] = self.lower[k].max(value);
            }
            return Ok(());
        }
        if linear.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "constraint {source} references no decision variable"
            )));
        }

        let slack_sign = match c.relation {
            Relation::LessEqual => Some(1.0),
            Relation::GreaterEqual => Some(-1.0),
            Relation::Equal => None,
        };
        if let Some(sign) = slack_sign {
            let slack_id = self
                .variables
                .iter()
                .filter(|v| matches!(v.key, VarKey::Slack(_)))
                .count();
            let k = self.variables.len();
            self.variables.push(Variable {
                key: VarKey::Slack(slack_id),
                hydraulic: false,
            });
            self.lower.push(0.0);
            self.upper.push(f64::INFINITY);
            linear.push((k, sign));
        }
        self.extra_rows.push(ConstraintRow {
            linear,
            products: Vec::new(),
            constant,
            source,
        });
        Ok(())
    }

    fn require_variable(&self, var: StateRef, what: &str) -> Result<usize> {
        self.variable_index(var)?.ok_or_else(|| {
            Error::InvalidParameter(format!(
                "{what} references {}, which is not a decision variable",
                self.state_name(var)
            ))
        })
    }

    fn variable_index(&self, var: StateRef) -> Result<Option<usize>> {
        if var.node >= self.topology.len() || var.time > self.params.steps {
            return Err(Error::Index(format!(
                "state reference node {} time {} out of range",
                var.node, var.time
            )));
        }
        Ok(self.index[var.node][var.time])
    }

    fn fixed_value(&self, var: StateRef) -> Result<f64> {
        self.fixed[var.node][var.time].ok_or_else(|| {
            Error::InvalidParameter(format!("no value is known for {}", self.state_name(var)))
        })
    }

    pub fn state_name(&self, var: StateRef) -> String {
        format!("{}(t{})", self.topology.nodes()[var.node].name, var.time)
    }

    pub fn variable_name(&self, k: usize) -> String {
        match self.variables[k].key {
            VarKey::State(s) => self.state_name(s),
            VarKey::Slack(i) => format!("slack{i}"),
        }
    }

    pub fn topology(&self) -> &GridTopology {
        &self.topology
    }

    pub fn params(&self) -> &HydraulicParameters {
        &self.params
    }

    pub fn initial(&self) -> &[Option<f64>] {
        &self.initial
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_hydraulic(&self) -> usize {
        self.num_hydraulic
    }

    pub fn num_constraints(&self) -> usize {
        self.hydraulic_rows.len() + self.extra_rows.len()
    }

    pub fn hydraulic_rows(&self) -> &[HydraulicRow] {
        &self.hydraulic_rows
    }

    pub fn extra_rows(&self) -> &[ConstraintRow] {
        &self.extra_rows
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn quadratic_terms(&self) -> &[FlatQuadratic] {
        &self.quadratic
    }

    pub fn linear_terms(&self) -> &[(usize, f64)] {
        &self.linear
    }

    /// Flat index of a state value, if it is a decision variable.
    pub fn index_of(&self, node: usize, time: usize) -> Option<usize> {
        self.index.get(node)?.get(time).copied().flatten()
    }

    pub fn fixed_at(&self, node: usize, time: usize) -> Option<f64> {
        self.fixed[node][time]
    }

    /// Whether node `node` is a level boundary left free (not prescribed).
    pub fn has_free_level_boundary(&self) -> Option<usize> {
        self.topology.boundary_nodes().into_iter().find(|&node| {
            self.topology.kind(node) == NodeKind::Level && self.index[node][1].is_some()
        })
    }

    /// Replaces `θ` in every constraint by a fixed value. Used to build
    /// problems that deliberately break zero-convexity.
    pub fn pin_theta(mut self, theta: f64) -> Self {
        self.theta_pin = Some(theta);
        self
    }

    /// Adds `coefficient · x_a · x_b` to extra row `row`, turning it
    /// non-affine.
    pub fn add_product_term(&mut self, row: usize, a: usize, b: usize, coefficient: f64) {
        self.extra_rows[row].products.push((a, b, coefficient));
    }

    /// Replaces the bounds of variable `k`. `None` removes a bound.
    pub fn set_bounds(&mut self, k: usize, lower: Option<f64>, upper: Option<f64>) {
        self.lower[k] = lower.unwrap_or(f64::NEG_INFINITY);
        self.upper[k] = upper.unwrap_or(f64::INFINITY);
    }

    pub(crate) fn effective_theta(&self, theta: f64) -> f64 {
        self.theta_pin.unwrap_or(theta)
    }

    /// Default interior starting point: midpoint of two-sided bounds, one
    /// unit inside one-sided bounds, initial levels for H variables where
    /// those are strictly inside the bounds.
    pub fn cold_start(&self) -> Vec<f64> {
        (0..self.num_variables())
            .map(|k| {
                let (l, u) = (self.lower[k], self.upper[k]);
                if let VarKey::State(s) = self.variables[k].key {
                    if self.topology.kind(s.node) == NodeKind::Level {
                        if let Some(h0) = self.initial[s.node] {
                            if h0 > l && h0 < u {
                                return h0;
                            }
                        }
                    }
                }
                match (l.is_finite(), u.is_finite()) {
                    (true, true) => 0.5 * (l + u),
                    (true, false) => l + 1.0,
                    (false, true) => u - 1.0,
                    (false, false) => 0.0,
                }
            })
            .collect()
    }

    /// Full trajectory of the hydraulic state at `x`.
    pub fn trajectory(&self, x: &[f64]) -> StateTrajectory {
        let view = self.view(x);
        let mut traj = StateTrajectory::new(self.topology.len(), self.params.steps);
        for (node, row) in traj.values.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = view.value(node, j);
            }
        }
        traj
    }

    pub(crate) fn view<'a>(&'a self, x: &'a [f64]) -> NlpState<'a> {
        NlpState { nlp: self, x }
    }

    pub fn check_dimension(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_variables() {
            return Err(Error::Dimension(format!(
                "expected {} variables, got {}",
                self.num_variables(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Fails unless `x_L < x < x_U` holds strictly on every bounded side.
    pub fn check_interior(&self, x: &[f64]) -> Result<()> {
        self.check_dimension(x)?;
        for (k, &v) in x.iter().enumerate() {
            if !(v > self.lower[k] && v < self.upper[k]) {
                return Err(Error::NotInterior { index: k });
            }
        }
        Ok(())
    }
}

/// State lookup through the variable vector, falling back to prescribed data.
pub(crate) struct NlpState<'a> {
    nlp: &'a ParametricNlp,
    x: &'a [f64],
}

impl StateView for NlpState<'_> {
    fn value(&self, node: usize, time: usize) -> f64 {
        match self.nlp.index[node][time] {
            Some(k) => self.x[k],
            None => self.nlp.fixed[node][time].unwrap_or(f64::NAN),
        }
    }
}

/// Builds the problem and rejects it unless every structural assumption
/// holds (bounds, initial conditions, fixed level boundaries, objective form,
/// affine extra constraints, independent constraint gradients).
pub fn assemble(problem: &ChannelProblem) -> Result<ParametricNlp> {
    let nlp = ParametricNlp::build(problem)?;
    let report = crate::diagnostics::check_assumptions(&nlp);
    if let Some((assumption, detail)) = report.first_failure() {
        return Err(Error::Assumption {
            assumption,
            detail: detail.to_string(),
        });
    }
    Ok(nlp)
}

#[cfg(test)]
pub(crate) mod tests;
