use super::{HydraulicRow, ParametricNlp};
use crate::error::Result;
use crate::hydraulics::{
    mass_balance_residual, momentum_curvature, momentum_partials, momentum_residual,
};
use crate::sparse::{SparseMatrix, TripletBuilder};

/// Newton system of the barrier problem,
/// `[[∇²L_μ, ∇cᵀ], [∇c, 0]] · (Δx, Δλ) = -F_μ`.
#[derive(Debug, Clone)]
pub struct KktSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
}

/// `-μ ln(x - l) - μ ln(u - x)` and its derivative; infinite bounds
/// contribute nothing.
pub fn log_barrier(x: f64, lower: f64, upper: f64, mu: f64) -> (f64, f64) {
    let (mut value, mut slope) = (0.0, 0.0);
    if lower.is_finite() {
        value -= mu * (x - lower).ln();
        slope -= mu / (x - lower);
    }
    if upper.is_finite() {
        value -= mu * (upper - x).ln();
        slope += mu / (upper - x);
    }
    (value, slope)
}

impl ParametricNlp {
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut f = self.objective_constant;
        for q in &self.quadratic {
            f += q.weight * (x[q.index] - q.target).powi(2);
        }
        for &(k, b) in &self.linear {
            f += b * x[k];
        }
        f
    }

    pub fn objective_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for q in &self.quadratic {
            g[q.index] += 2.0 * q.weight * (x[q.index] - q.target);
        }
        for &(k, b) in &self.linear {
            g[k] += b;
        }
        g
    }

    /// Diagonal of the (diagonal) objective Hessian.
    pub fn objective_hessian_diagonal(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.num_variables()];
        for q in &self.quadratic {
            h[q.index] += 2.0 * q.weight;
        }
        h
    }

    /// `f(x) - μ Σ ln(x - x_L) - μ Σ ln(x_U - x)` and its gradient.
    pub fn barrier_value_and_gradient(
        &self,
        x: &[f64],
        mu: f64,
        _theta: f64,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_interior(x)?;
        let mut value = self.objective(x);
        let mut grad = self.objective_gradient(x);
        for k in 0..x.len() {
            let (b, db) = log_barrier(x[k], self.lower[k], self.upper[k], mu);
            value += b;
            grad[k] += db;
        }
        Ok((value, grad))
    }

    pub fn constraint_values(&self, x: &[f64], theta: f64) -> Result<Vec<f64>> {
        self.check_dimension(x)?;
        let theta = self.effective_theta(theta);
        let view = self.view(x);
        let mut c = Vec::with_capacity(self.num_constraints());
        for row in &self.hydraulic_rows {
            c.push(match *row {
                HydraulicRow::MassBalance { node, time } => {
                    mass_balance_residual(&self.topology, &self.params, &view, node, time)?
                }
                HydraulicRow::Momentum { node, time } => {
                    momentum_residual(&self.topology, &self.params, &view, node, time, theta)?
                }
            });
        }
        for row in &self.extra_rows {
            let mut v = row.constant;
            for &(k, a) in &row.linear {
                v += a * x[k];
            }
            for &(p, q, b) in &row.products {
                v += b * x[p] * x[q];
            }
            c.push(v);
        }
        Ok(c)
    }

    /// Sparse `∇_x c`, one row per constraint. The pattern does not depend
    /// on `x` or `θ`.
    pub fn constraint_jacobian(&self, x: &[f64], theta: f64) -> Result<SparseMatrix> {
        self.check_dimension(x)?;
        let theta = self.effective_theta(theta);
        let view = self.view(x);
        let p = &self.params;
        let mut jac = TripletBuilder::new(self.num_constraints(), self.num_variables());
        for (r, row) in self.hydraulic_rows.iter().enumerate() {
            match *row {
                HydraulicRow::MassBalance { node, time } => {
                    let storage = p.width / p.dt;
                    let inv_dx = 1.0 / p.dx;
                    let entries = [
                        (node, time - 1, -storage),
                        (node, time, storage),
                        (node - 1, time, -inv_dx),
                        (node + 1, time, inv_dx),
                    ];
                    for (n, t, v) in entries {
                        if let Some(k) = self.index_of(n, t) {
                            jac.push(r, k, v);
                        }
                    }
                }
                HydraulicRow::Momentum { node, time } => {
                    let d = momentum_partials(&self.topology, p, &view, node, time, theta)?;
                    let entries = [
                        (node - 1, time - 1, d.phi),
                        (node + 1, time - 1, d.phi),
                        (node - 1, time, -d.psi_left),
                        (node + 1, time, d.psi_right),
                        (node, time - 1, -d.inv_dt),
                        (node, time, d.tau),
                    ];
                    for (n, t, v) in entries {
                        if let Some(k) = self.index_of(n, t) {
                            jac.push(r, k, v);
                        }
                    }
                }
            }
        }
        let offset = self.hydraulic_rows.len();
        for (i, row) in self.extra_rows.iter().enumerate() {
            for &(k, a) in &row.linear {
                jac.push(offset + i, k, a);
            }
            for &(a, b, coef) in &row.products {
                jac.push(offset + i, a, coef * x[b]);
                jac.push(offset + i, b, coef * x[a]);
            }
        }
        Ok(jac.build())
    }

    /// `∇_x L_μ = ∇f - μ/(x - x_L) + μ/(x_U - x) + ∇cᵀ λ`.
    pub fn lagrangian_gradient(
        &self,
        x: &[f64],
        lambda: &[f64],
        mu: f64,
        theta: f64,
    ) -> Result<Vec<f64>> {
        self.check_multipliers(lambda)?;
        let (_, mut grad) = self.barrier_value_and_gradient(x, mu, theta)?;
        let jac = self.constraint_jacobian(x, theta)?;
        for &(r, c, v) in jac.entries() {
            grad[c] += v * lambda[r];
        }
        Ok(grad)
    }

    /// Symmetric `∇²_xx L_μ`, both triangles stored.
    pub fn lagrangian_hessian(
        &self,
        x: &[f64],
        lambda: &[f64],
        mu: f64,
        theta: f64,
    ) -> Result<SparseMatrix> {
        self.check_interior(x)?;
        self.check_multipliers(lambda)?;
        let n = self.num_variables();
        let mut hess = TripletBuilder::new(n, n);
        self.push_hessian(&mut hess, x, lambda, mu, theta)?;
        Ok(hess.build())
    }

    fn push_hessian(
        &self,
        hess: &mut TripletBuilder,
        x: &[f64],
        lambda: &[f64],
        mu: f64,
        theta: f64,
    ) -> Result<()> {
        let objective = self.objective_hessian_diagonal();
        for k in 0..x.len() {
            let mut d = objective[k];
            if self.lower[k].is_finite() {
                d += mu / (x[k] - self.lower[k]).powi(2);
            }
            if self.upper[k].is_finite() {
                d += mu / (self.upper[k] - x[k]).powi(2);
            }
            hess.push(k, k, d);
        }

        let theta = self.effective_theta(theta);
        let view = self.view(x);
        for (r, row) in self.hydraulic_rows.iter().enumerate() {
            let HydraulicRow::Momentum { node, time } = *row else {
                continue;
            };
            let curv = momentum_curvature(&self.topology, &self.params, &view, node, time, theta)?;
            let l = lambda[r];
            let prev = [self.index_of(node - 1, time - 1), self.index_of(node + 1, time - 1)];
            let q = self.index_of(node, time);
            for a in prev.iter().flatten() {
                for b in prev.iter().flatten() {
                    hess.push(*a, *b, l * curv.prev_levels);
                }
                if let Some(q) = q {
                    hess.push(*a, q, l * curv.prev_level_discharge);
                    hess.push(q, *a, l * curv.prev_level_discharge);
                }
            }
            if let Some(q) = q {
                hess.push(q, q, l * curv.discharge);
            }
            if let Some(k) = self.index_of(node - 1, time) {
                hess.push(k, k, l * curv.left_level);
            }
            if let Some(k) = self.index_of(node + 1, time) {
                hess.push(k, k, l * curv.right_level);
            }
        }
        let offset = self.hydraulic_rows.len();
        for (i, row) in self.extra_rows.iter().enumerate() {
            let l = lambda[offset + i];
            for &(a, b, coef) in &row.products {
                hess.push(a, b, l * coef);
                hess.push(b, a, l * coef);
            }
        }
        Ok(())
    }

    /// `F_μ = (∇_x L_μ, c)`.
    pub fn primal_residual(
        &self,
        x: &[f64],
        lambda: &[f64],
        mu: f64,
        theta: f64,
    ) -> Result<Vec<f64>> {
        let mut f = self.lagrangian_gradient(x, lambda, mu, theta)?;
        f.extend(self.constraint_values(x, theta)?);
        Ok(f)
    }

    /// `∂F_μ/∂(x, λ)` and the Newton right-hand side `-F_μ`.
    pub fn kkt_matrix(&self, x: &[f64], lambda: &[f64], mu: f64, theta: f64) -> Result<KktSystem> {
        self.check_interior(x)?;
        self.check_multipliers(lambda)?;
        let n = self.num_variables();
        let m = self.num_constraints();
        let mut kkt = TripletBuilder::new(n + m, n + m);
        self.push_hessian(&mut kkt, x, lambda, mu, theta)?;
        let jac = self.constraint_jacobian(x, theta)?;
        for &(r, c, v) in jac.entries() {
            kkt.push(n + r, c, v);
            kkt.push(c, n + r, v);
        }
        let rhs = self
            .primal_residual(x, lambda, mu, theta)?
            .into_iter()
            .map(|v| -v)
            .collect();
        Ok(KktSystem {
            matrix: kkt.build(),
            rhs,
        })
    }

    fn check_multipliers(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.num_constraints() {
            return Err(crate::error::Error::Dimension(format!(
                "expected {} multipliers, got {}",
                self.num_constraints(),
                lambda.len()
            )));
        }
        Ok(())
    }
}
