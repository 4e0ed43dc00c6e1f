//! Direct solver for the KKT systems.
//!
//! The matrix is symmetrically permuted with reverse Cuthill-McKee to shrink
//! its bandwidth, then factorized by banded Gaussian elimination with partial
//! pivoting. Pivoting keeps the factorization stable on symmetric indefinite
//! matrices at the price of doubling the upper bandwidth.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::sparse::SparseMatrix;

/// Returned when a pivot falls below the singularity threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularMatrix {
    pub column: usize,
    pub pivot: f64,
}

/// Reverse Cuthill-McKee ordering of the symmetrized pattern.
/// `perm[new] = old`.
pub fn rcm_ordering(matrix: &SparseMatrix) -> Vec<usize> {
    let n = matrix.nrows();
    let mut adjacency = vec![Vec::new(); n];
    for &(r, c, _) in matrix.entries() {
        if r != c {
            adjacency[r].push(c);
            adjacency[c].push(r);
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        // Lowest-degree unvisited vertex starts the next component.
        let start = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v))
            .expect("unvisited vertex");
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v]
                .iter()
                .copied()
                .filter(|&u| !visited[u])
                .collect();
            next.sort_by_key(|&u| (degree[u], u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Half-bandwidth of `matrix` under the ordering `perm`.
pub fn bandwidth(matrix: &SparseMatrix, perm: &[usize]) -> usize {
    let mut inverse = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    matrix
        .entries()
        .iter()
        .map(|&(r, c, _)| inverse[r].abs_diff(inverse[c]))
        .max()
        .unwrap_or(0)
}

/// LU factors of a permuted square matrix in band storage.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    lower: usize,
    upper: usize,
    /// Row `i` holds columns `i - lower ..= i + lower + upper`.
    band: Vec<f64>,
    width: usize,
    pivots: Vec<usize>,
    perm: Vec<usize>,
}

impl BandLu {
    pub fn factor(matrix: &SparseMatrix) -> Result<Self, SingularMatrix> {
        assert_eq!(matrix.nrows(), matrix.ncols(), "square matrix expected");
        let n = matrix.nrows();
        let perm = rcm_ordering(matrix);
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let half = bandwidth(matrix, &perm);
        let width = 3 * half + 1;
        let mut lu = Self {
            n,
            lower: half,
            upper: half,
            band: vec![0.0; n * width],
            width,
            pivots: vec![0; n],
            perm,
        };
        for &(r, c, v) in matrix.entries() {
            *lu.at_mut(inverse[r], inverse[c]) += v;
        }
        let threshold = n as f64 * f64::EPSILON * matrix.max_abs();
        lu.eliminate(threshold)?;
        Ok(lu)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.lower
    }

    #[inline]
    fn offset(&self, row: usize, col: usize) -> usize {
        debug_assert!(col + self.lower >= row && col <= row + self.lower + self.upper);
        row * self.width + (col + self.lower - row)
    }

    #[inline]
    fn at(&self, row: usize, col: usize) -> f64 {
        self.band[self.offset(row, col)]
    }

    #[inline]
    fn at_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        let k = self.offset(row, col);
        &mut self.band[k]
    }

    fn eliminate(&mut self, threshold: f64) -> Result<(), SingularMatrix> {
        let n = self.n;
        for k in 0..n {
            let last_row = (k + self.lower).min(n - 1);
            let last_col = (k + self.lower + self.upper).min(n - 1);
            let mut p = k;
            let mut best = self.at(k, k).abs();
            for r in k + 1..=last_row {
                let v = self.at(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > threshold) {
                return Err(SingularMatrix {
                    column: k,
                    pivot: best,
                });
            }
            self.pivots[k] = p;
            if p != k {
                for c in k..=last_col {
                    let a = self.offset(k, c);
                    let b = self.offset(p, c);
                    self.band.swap(a, b);
                }
            }
            let pivot = self.at(k, k);
            for r in k + 1..=last_row {
                let factor = self.at(r, k) / pivot;
                *self.at_mut(r, k) = factor;
                if factor != 0.0 {
                    for c in k + 1..=last_col {
                        let u = self.at(k, c);
                        *self.at_mut(r, c) -= factor * u;
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b` for the original (unpermuted) matrix.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| rhs[old]).collect();
        for k in 0..n {
            let p = self.pivots[k];
            y.swap(k, p);
            let last_row = (k + self.lower).min(n - 1);
            let yk = y[k];
            for r in k + 1..=last_row {
                y[r] -= self.at(r, k) * yk;
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + self.lower + self.upper).min(n - 1);
            let mut s = y[k];
            for c in k + 1..=last_col {
                s -= self.at(k, c) * y[c];
            }
            y[k] = s / self.at(k, k);
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Factorizes, solves and applies one step of iterative refinement.
/// Returns the solution and its relative residual `‖b - A x‖∞ / ‖b‖∞`.
pub fn solve_refined(matrix: &SparseMatrix, rhs: &[f64]) -> Result<(Vec<f64>, f64), SingularMatrix> {
    let lu = BandLu::factor(matrix)?;
    let mut x = lu.solve(rhs);
    let residual = |x: &[f64]| -> Vec<f64> {
        let ax = matrix.mul_vec(x);
        rhs.iter().zip(ax).map(|(b, a)| b - a).collect()
    };
    let correction = lu.solve(&residual(&x));
    for (xi, di) in x.iter_mut().zip(correction) {
        *xi += di;
    }
    let r = residual(&x);
    let rhs_norm = rhs.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let r_norm = r.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let relative = if rhs_norm > 0.0 { r_norm / rhs_norm } else { r_norm };
    Ok((x, relative))
}

/// Singular values in ascending order.
pub fn singular_values(matrix: &DMatrix<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = matrix.clone().svd(false, false).singular_values.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Numerical rank with threshold `max(m, n) · ε · σ_max`.
pub fn numerical_rank(matrix: &DMatrix<f64>) -> usize {
    let sv = singular_values(matrix);
    let max = sv.last().copied().unwrap_or(0.0);
    let tol = matrix.nrows().max(matrix.ncols()) as f64 * f64::EPSILON * max;
    sv.iter().filter(|&&s| s > tol).count()
}
