use nalgebra::{DMatrix, DVector};

use super::{
    mass_balance_residual, momentum_partials, momentum_residual, GridTopology,
    HydraulicParameters, NodeKind, StateTrajectory,
};
use crate::error::{Error, Result};

const MAX_NEWTON_ITERS: usize = 50;
const RESIDUAL_TOL: f64 = 1e-10;

/// Initial values and boundary series of a channel, indexed by node.
///
/// `series[node]` holds the prescribed values for time indices `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelInputs {
    pub initial: Vec<Option<f64>>,
    pub series: Vec<Option<Vec<f64>>>,
}

/// Time-steps the square system `c_{i,j} = 0, d_{i,j} = 0` with every
/// boundary prescribed, solving each step by Newton's method.
///
/// This is a validation oracle: it shares the residual definitions with the
/// optimizer but none of its machinery.
pub fn forward_simulate(
    topology: &GridTopology,
    params: &HydraulicParameters,
    inputs: &ChannelInputs,
    theta: f64,
) -> Result<StateTrajectory> {
    params.validate()?;
    let steps = params.steps;
    let n = topology.len();
    if inputs.initial.len() != n || inputs.series.len() != n {
        return Err(Error::Dimension(format!(
            "inputs cover {} / {} nodes, grid has {n}",
            inputs.initial.len(),
            inputs.series.len()
        )));
    }

    let mut traj = StateTrajectory::new(n, steps);
    for (i, node) in topology.nodes().iter().enumerate() {
        let needs_initial = node.kind == NodeKind::Level || topology.is_interior(i);
        match inputs.initial[i] {
            Some(v) => traj.values[i][0] = v,
            None if needs_initial => {
                return Err(Error::InvalidParameter(format!(
                    "missing initial value for node {}",
                    node.name
                )))
            }
            None => {}
        }
        if node.kind == NodeKind::Level && !(traj.values[i][0] > params.bottom_level) {
            return Err(Error::DryReach { node: i, time: 0 });
        }
        if !topology.is_interior(i) {
            let series = inputs.series[i].as_ref().ok_or_else(|| {
                Error::InvalidParameter(format!("missing boundary series for node {}", node.name))
            })?;
            if series.len() != steps {
                return Err(Error::Dimension(format!(
                    "boundary series of node {} has {} values, expected {steps}",
                    node.name,
                    series.len()
                )));
            }
            traj.values[i][1..].copy_from_slice(series);
        }
    }

    let interior: Vec<usize> = topology.interior_nodes().collect();
    let m = interior.len();
    for j in 1..=steps {
        for &i in &interior {
            traj.values[i][j] = traj.values[i][j - 1];
        }
        let mut converged = false;
        let mut last_norm = f64::INFINITY;
        for _ in 0..=MAX_NEWTON_ITERS {
            let mut residual = DVector::zeros(m);
            for (row, &i) in interior.iter().enumerate() {
                residual[row] = match topology.kind(i) {
                    NodeKind::Level => mass_balance_residual(topology, params, &traj, i, j)?,
                    NodeKind::Discharge => momentum_residual(topology, params, &traj, i, j, theta)?,
                };
            }
            last_norm = residual.amax();
            if !last_norm.is_finite() {
                break;
            }
            if last_norm <= RESIDUAL_TOL {
                converged = true;
                break;
            }
            let jac = step_jacobian(topology, params, &traj, &interior, j, theta)?;
            let step = jac.lu().solve(&residual).ok_or(Error::SimulationDiverged {
                time: j,
                residual: last_norm,
            })?;
            for (row, &i) in interior.iter().enumerate() {
                traj.values[i][j] -= step[row];
            }
        }
        if !converged {
            return Err(Error::SimulationDiverged {
                time: j,
                residual: last_norm,
            });
        }
        for &i in &interior {
            if topology.kind(i) == NodeKind::Level && !(traj.values[i][j] > params.bottom_level) {
                return Err(Error::DryReach { node: i, time: j });
            }
        }
    }
    Ok(traj)
}

/// Jacobian of the step-`j` residuals with respect to the interior values at
/// `t_j`, rows and columns in channel order (tridiagonal).
fn step_jacobian(
    topology: &GridTopology,
    params: &HydraulicParameters,
    traj: &StateTrajectory,
    interior: &[usize],
    j: usize,
    theta: f64,
) -> Result<DMatrix<f64>> {
    let m = interior.len();
    let first = interior[0];
    let col = |node: usize| -> Option<usize> {
        topology.is_interior(node).then(|| node - first)
    };
    let mut jac = DMatrix::zeros(m, m);
    for (row, &i) in interior.iter().enumerate() {
        match topology.kind(i) {
            NodeKind::Level => {
                jac[(row, row)] = params.width / params.dt;
                if let Some(c) = col(i - 1) {
                    jac[(row, c)] = -1.0 / params.dx;
                }
                if let Some(c) = col(i + 1) {
                    jac[(row, c)] = 1.0 / params.dx;
                }
            }
            NodeKind::Discharge => {
                let d = momentum_partials(topology, params, traj, i, j, theta)?;
                jac[(row, row)] = d.tau;
                if let Some(c) = col(i - 1) {
                    jac[(row, c)] = -d.psi_left;
                }
                if let Some(c) = col(i + 1) {
                    jac[(row, c)] = d.psi_right;
                }
            }
        }
    }
    Ok(jac)
}
