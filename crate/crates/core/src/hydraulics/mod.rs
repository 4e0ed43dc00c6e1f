//! Staggered-grid channel model.
//!
//! A channel is an alternating sequence of water-level (H) and discharge (Q)
//! nodes. Interior nodes (flanked on both sides by the other kind) carry the
//! discretized mass balance (H nodes) and the homotopy momentum equation
//! (Q nodes). Time index 0 is the initial condition; indices `1..=T` are the
//! modelled steps.

mod simulate;

pub use simulate::{forward_simulate, ChannelInputs};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "H")]
    Level,
    #[serde(rename = "Q")]
    Discharge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Prescribed water level series.
    LevelBoundary,
    /// Prescribed discharge series.
    FlowBoundaryFixed,
    /// Discharge decided by the optimizer.
    FlowBoundaryControl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    /// Only end nodes carry a boundary designation. An H end node without
    /// one is a free level boundary, which the assumption checks reject.
    pub boundary: Option<BoundaryKind>,
}

/// Ordered node sequence of a single channel.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTopology {
    nodes: Vec<Node>,
}

impl GridTopology {
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Topology("no nodes".into()));
        }
        if nodes.len() < 3 {
            return Err(Error::Topology(
                "a channel needs at least three nodes to have an interior".into(),
            ));
        }
        for pair in nodes.windows(2) {
            if pair[0].kind == pair[1].kind {
                return Err(Error::Topology(format!(
                    "nodes {} and {} are both {:?} nodes; H and Q must alternate",
                    pair[0].name, pair[1].name, pair[0].kind
                )));
            }
        }
        let last = nodes.len() - 1;
        for (i, node) in nodes.iter().enumerate() {
            let is_end = i == 0 || i == last;
            match (is_end, node.kind, node.boundary) {
                (false, _, Some(_)) => {
                    return Err(Error::Topology(format!(
                        "interior node {} cannot carry a boundary designation",
                        node.name
                    )))
                }
                (true, NodeKind::Discharge, None) => {
                    return Err(Error::Topology(format!(
                        "end node {} needs a flow boundary designation",
                        node.name
                    )))
                }
                (true, NodeKind::Discharge, Some(BoundaryKind::LevelBoundary)) => {
                    return Err(Error::Topology(format!(
                        "Q node {} cannot be a level boundary",
                        node.name
                    )))
                }
                (true, NodeKind::Level, Some(BoundaryKind::FlowBoundaryFixed))
                | (true, NodeKind::Level, Some(BoundaryKind::FlowBoundaryControl)) => {
                    return Err(Error::Topology(format!(
                        "H node {} cannot be a flow boundary",
                        node.name
                    )))
                }
                _ => {}
            }
        }
        let mut seen = std::collections::HashSet::new();
        for node in &nodes {
            if !seen.insert(node.name.as_str()) {
                return Err(Error::Topology(format!("duplicate node name {}", node.name)));
            }
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.nodes[node].kind
    }

    pub fn is_interior(&self, node: usize) -> bool {
        node > 0 && node + 1 < self.nodes.len()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// `I_H`: H nodes with a Q node on both sides.
    pub fn interior_levels(&self) -> Vec<usize> {
        (1..self.nodes.len() - 1)
            .filter(|&i| self.nodes[i].kind == NodeKind::Level)
            .collect()
    }

    /// `I_Q`: Q nodes with an H node on both sides.
    pub fn interior_discharges(&self) -> Vec<usize> {
        (1..self.nodes.len() - 1)
            .filter(|&i| self.nodes[i].kind == NodeKind::Discharge)
            .collect()
    }

    /// All interior nodes in channel order.
    pub fn interior_nodes(&self) -> std::ops::Range<usize> {
        1..self.nodes.len() - 1
    }

    pub fn boundary_nodes(&self) -> [usize; 2] {
        [0, self.nodes.len() - 1]
    }

    pub fn first_discharge(&self) -> usize {
        if self.nodes[0].kind == NodeKind::Discharge {
            0
        } else {
            1
        }
    }

    pub fn last_discharge(&self) -> usize {
        let last = self.nodes.len() - 1;
        if self.nodes[last].kind == NodeKind::Discharge {
            last
        } else {
            last - 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HydraulicParameters {
    /// Channel width `w` [m].
    pub width: f64,
    /// Bottom level `H_b` [m].
    pub bottom_level: f64,
    /// Chézy coefficient `C` [m^(1/2)/s].
    pub chezy: f64,
    pub gravity: f64,
    /// Total channel length [m].
    pub length: f64,
    /// Spacing between neighbouring H nodes [m].
    pub dx: f64,
    /// Time step [s].
    pub dt: f64,
    /// Index of the final time step.
    pub steps: usize,
    /// Linearization level `H̄` [m].
    pub nominal_level: f64,
    /// Linearization discharge `Q̄` [m³/s].
    pub nominal_discharge: f64,
    /// Smoothing constant of `⟦x⟧ = sqrt(x² + ε)`.
    pub eps_abs: f64,
}

pub const DEFAULT_GRAVITY: f64 = 9.81;
pub const DEFAULT_EPS_ABS: f64 = 1e-4;

impl HydraulicParameters {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("chezy", self.chezy),
            ("gravity", self.gravity),
            ("dx", self.dx),
            ("dt", self.dt),
            ("eps_abs", self.eps_abs),
            ("length", self.length),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if self.steps < 1 {
            return Err(Error::InvalidParameter("steps must be at least 1".into()));
        }
        if !(self.nominal_level > self.bottom_level) {
            return Err(Error::InvalidParameter(format!(
                "nominal level {} must lie above the bottom level {}",
                self.nominal_level, self.bottom_level
            )));
        }
        if !self.nominal_discharge.is_finite() || !self.bottom_level.is_finite() {
            return Err(Error::InvalidParameter("levels and discharges must be finite".into()));
        }
        Ok(())
    }

    /// `Ā = w (H̄ - H_b)`.
    pub fn nominal_area(&self) -> f64 {
        self.width * (self.nominal_level - self.bottom_level)
    }

    /// `P̄ = w + 2 (H̄ - H_b)`.
    pub fn nominal_perimeter(&self) -> f64 {
        self.width + 2.0 * (self.nominal_level - self.bottom_level)
    }

    pub fn nominal_radius(&self) -> f64 {
        self.nominal_area() / self.nominal_perimeter()
    }

    /// Friction factor of the linear model, `P̄ ⟦Q̄⟧ / Ā²`.
    fn nominal_friction(&self) -> f64 {
        let area = self.nominal_area();
        self.nominal_perimeter() * sqrt_abs(self.nominal_discharge, self.eps_abs) / (area * area)
    }
}

/// Water levels and discharges per node over time indices `0..=T`.
///
/// Entries that carry no meaning (a boundary discharge at `t_0` that was not
/// supplied) are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub values: Vec<Vec<f64>>,
}

impl StateTrajectory {
    pub fn new(nodes: usize, steps: usize) -> Self {
        Self {
            values: vec![vec![f64::NAN; steps + 1]; nodes],
        }
    }

    pub fn steps(&self) -> usize {
        self.values.first().map_or(0, |v| v.len() - 1)
    }
}

/// Read access to hydraulic node values at a time index.
pub trait StateView {
    fn value(&self, node: usize, time: usize) -> f64;
}

impl StateView for StateTrajectory {
    fn value(&self, node: usize, time: usize) -> f64 {
        self.values[node][time]
    }
}

/// Smooth approximation `sqrt(x² + ε)` of `|x|`.
pub fn smooth_abs(x: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "smoothing constant must be positive, got {eps}"
        )));
    }
    Ok(sqrt_abs(x, eps))
}

#[inline]
fn sqrt_abs(x: f64, eps: f64) -> f64 {
    (x * x + eps).sqrt()
}

/// Flow area between two neighbouring levels, `(w/2)(H_l + H_r - 2 H_b)`.
pub fn wetted_area(h_left: f64, h_right: f64, params: &HydraulicParameters) -> f64 {
    0.5 * params.width * (h_left + h_right - 2.0 * params.bottom_level)
}

/// Wetted perimeter between two neighbouring levels, `w + H_l + H_r - 2 H_b`.
pub fn wetted_perimeter(h_left: f64, h_right: f64, params: &HydraulicParameters) -> f64 {
    params.width + h_left + h_right - 2.0 * params.bottom_level
}

fn check_step(params: &HydraulicParameters, time: usize) -> Result<()> {
    if time == 0 || time > params.steps {
        return Err(Error::Index(format!(
            "time index {time} outside 1..={}",
            params.steps
        )));
    }
    Ok(())
}

fn check_interior(topology: &GridTopology, node: usize, kind: NodeKind) -> Result<()> {
    if node >= topology.len() || !topology.is_interior(node) || topology.kind(node) != kind {
        return Err(Error::Index(format!(
            "node {node} is not an interior {kind:?} node"
        )));
    }
    Ok(())
}

/// Discretized mass balance `c_{i,j}` at interior H node `node`.
pub fn mass_balance_residual<S: StateView + ?Sized>(
    topology: &GridTopology,
    params: &HydraulicParameters,
    state: &S,
    node: usize,
    time: usize,
) -> Result<f64> {
    check_interior(topology, node, NodeKind::Level)?;
    check_step(params, time)?;
    let q_in = state.value(node - 1, time);
    let q_out = state.value(node + 1, time);
    let h_now = state.value(node, time);
    let h_prev = state.value(node, time - 1);
    Ok((q_out - q_in) / params.dx + params.width * (h_now - h_prev) / params.dt)
}

/// Values entering the momentum equation of one interior Q node at one step.
#[derive(Debug, Clone, Copy)]
struct MomentumStencil {
    h_left_prev: f64,
    h_right_prev: f64,
    h_left: f64,
    h_right: f64,
    q_prev: f64,
    q: f64,
}

fn momentum_stencil<S: StateView + ?Sized>(
    topology: &GridTopology,
    params: &HydraulicParameters,
    state: &S,
    node: usize,
    time: usize,
    theta: f64,
) -> Result<MomentumStencil> {
    check_interior(topology, node, NodeKind::Discharge)?;
    check_step(params, time)?;
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidParameter(format!(
            "homotopy parameter {theta} outside [0, 1]"
        )));
    }
    let stencil = MomentumStencil {
        h_left_prev: state.value(node - 1, time - 1),
        h_right_prev: state.value(node + 1, time - 1),
        h_left: state.value(node - 1, time),
        h_right: state.value(node + 1, time),
        q_prev: state.value(node, time - 1),
        q: state.value(node, time),
    };
    if !(wetted_area(stencil.h_left_prev, stencil.h_right_prev, params) > 0.0) {
        return Err(Error::DryReach { node, time: time - 1 });
    }
    Ok(stencil)
}

/// Homotopy momentum residual `d_{i,j}` at interior Q node `node`.
///
/// The friction area and perimeter are taken at `t_{j-1}`, the pressure area
/// and the discharge at `t_j`.
pub fn momentum_residual<S: StateView + ?Sized>(
    topology: &GridTopology,
    params: &HydraulicParameters,
    state: &S,
    node: usize,
    time: usize,
    theta: f64,
) -> Result<f64> {
    let s = momentum_stencil(topology, params, state, node, time, theta)?;
    let g = params.gravity;
    let area_now = wetted_area(s.h_left, s.h_right, params);
    let area_prev = wetted_area(s.h_left_prev, s.h_right_prev, params);
    let perimeter_prev = wetted_perimeter(s.h_left_prev, s.h_right_prev, params);

    let inertia = (s.q - s.q_prev) / params.dt;
    let pressure = g
        * (theta * area_now + (1.0 - theta) * params.nominal_area())
        * (s.h_right - s.h_left)
        / params.dx;
    let friction_factor = theta * perimeter_prev * sqrt_abs(s.q, params.eps_abs)
        / (area_prev * area_prev)
        + (1.0 - theta) * params.nominal_friction();
    let friction = g * friction_factor * s.q / (params.chezy * params.chezy);
    Ok(inertia + pressure + friction)
}

/// Nonzero first derivatives of `d_{i,j}`.
///
/// `d` depends on the levels left and right of the Q node at `t_{j-1}`
/// (both with derivative `phi`), on those levels at `t_j` (derivatives
/// `-psi_left` and `psi_right`), on the discharge at `t_{j-1}` (derivative
/// `-1/Δt`) and on the discharge at `t_j` (derivative `tau`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumPartials {
    pub phi: f64,
    pub psi_left: f64,
    pub psi_right: f64,
    pub tau: f64,
    pub inv_dt: f64,
}

pub fn momentum_partials<S: StateView + ?Sized>(
    topology: &GridTopology,
    params: &HydraulicParameters,
    state: &S,
    node: usize,
    time: usize,
    theta: f64,
) -> Result<MomentumPartials> {
    let s = momentum_stencil(topology, params, state, node, time, theta)?;
    let g = params.gravity;
    let w = params.width;
    let c2 = params.chezy * params.chezy;
    let area_prev = wetted_area(s.h_left_prev, s.h_right_prev, params);
    let perimeter_prev = wetted_perimeter(s.h_left_prev, s.h_right_prev, params);
    let abs_q = sqrt_abs(s.q, params.eps_abs);

    let phi = -g * 0.5 * w * theta * abs_q * s.q / c2 * (w + perimeter_prev)
        / area_prev.powi(3);
    let nominal_pressure = (1.0 - theta) * params.nominal_area();
    let psi_left = g / params.dx * (theta * w * (s.h_left - params.bottom_level) + nominal_pressure);
    let psi_right =
        g / params.dx * (theta * w * (s.h_right - params.bottom_level) + nominal_pressure);
    let tau = 1.0 / params.dt
        + g / c2
            * (theta * perimeter_prev / (area_prev * area_prev) * (s.q * s.q + abs_q * abs_q)
                / abs_q
                + (1.0 - theta) * params.nominal_friction());
    Ok(MomentumPartials {
        phi,
        psi_left,
        psi_right,
        tau,
        inv_dt: 1.0 / params.dt,
    })
}

/// Nonzero second derivatives of `d_{i,j}`.
///
/// `prev_levels` is the common value of every second derivative with respect
/// to two levels at `t_{j-1}` (left/left, left/right, right/right);
/// `prev_level_discharge` couples either `t_{j-1}` level with the `t_j`
/// discharge. The pressure term contributes `left_level` and `right_level`
/// on the diagonal of the `t_j` levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumCurvature {
    pub prev_levels: f64,
    pub prev_level_discharge: f64,
    pub discharge: f64,
    pub left_level: f64,
    pub right_level: f64,
}

pub fn momentum_curvature<S: StateView + ?Sized>(
    topology: &GridTopology,
    params: &HydraulicParameters,
    state: &S,
    node: usize,
    time: usize,
    theta: f64,
) -> Result<MomentumCurvature> {
    let s = momentum_stencil(topology, params, state, node, time, theta)?;
    let g = params.gravity;
    let w = params.width;
    let eps = params.eps_abs;
    let scale = g * theta / (params.chezy * params.chezy);

    // Friction factor P/A² as a function of u = H_l + H_r - 2 H_b at t_{j-1}.
    let u = s.h_left_prev + s.h_right_prev - 2.0 * params.bottom_level;
    let w2 = w * w;
    let f = 4.0 * (w + u) / (w2 * u * u);
    let df = -4.0 * (u + 2.0 * w) / (w2 * u.powi(3));
    let d2f = 8.0 * (u + 3.0 * w) / (w2 * u.powi(4));

    // G(Q) = ⟦Q⟧ Q and its derivatives.
    let abs_q = sqrt_abs(s.q, eps);
    let big_g = abs_q * s.q;
    let dg = (2.0 * s.q * s.q + eps) / abs_q;
    let d2g = s.q * (2.0 * s.q * s.q + 3.0 * eps) / abs_q.powi(3);

    let pressure = g * theta * w / params.dx;
    Ok(MomentumCurvature {
        prev_levels: scale * d2f * big_g,
        prev_level_discharge: scale * df * dg,
        discharge: scale * f * d2g,
        left_level: -pressure,
        right_level: pressure,
    })
}
