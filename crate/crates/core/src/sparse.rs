//! Minimal coordinate-format sparse matrix.

use nalgebra::DMatrix;

/// Sparse matrix with entries sorted by (row, column) and duplicates summed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

/// Accumulates entries before compression.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    /// Adds `value` at `(row, col)`. Explicit zeros are kept so the pattern
    /// only depends on structure.
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> SparseMatrix {
        // Stable sort keeps summation order deterministic.
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for (r, c, v) in self.entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            entries: merged,
        }
    }
}

impl SparseMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(row, col), |&(r, c, _)| (r, c))
            .map_or(0.0, |k| self.entries[k].2)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| f64::max(m, e.2.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.entries
            .iter()
            .all(|&(r, c, v)| (self.get(c, r) - v).abs() <= tol * v.abs().max(1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let mut b = TripletBuilder::new(2, 3);
        b.push(1, 2, 1.5);
        b.push(0, 0, 1.0);
        b.push(1, 2, 2.0);
        let m = b.build();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 2), 3.5);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 2.0]), vec![1.0, 7.0]);
    }
}
