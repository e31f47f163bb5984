//! Small dense helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Columns of `vectors` match `values`.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen(m: &DMatrix<f64>) -> SortedEigen {
    let n = m.nrows();
    if n == 0 {
        return SortedEigen {
            values: Vec::new(),
            vectors: DMatrix::zeros(0, 0),
        };
    }
    // symmetrize so tiny asymmetries from accumulation don't leak in
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    SortedEigen { values, vectors }
}

impl SortedEigen {
    /// Applies `f(lambda)` spectrally to `v`, skipping eigenvalues at or
    /// below `cutoff` (their contribution is zero).
    pub fn apply(&self, v: &DVector<f64>, cutoff: f64, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (j, &lam) in self.values.iter().enumerate() {
            if lam <= cutoff {
                continue;
            }
            let u = self.vectors.column(j);
            let coef = u.dot(v) * f(lam);
            out.axpy(coef, &u, 1.0);
        }
        out
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }
}

/// Solves `m x = b` for symmetric positive definite `m`, falling back to LU.
pub fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    m.clone()
        .lu()
        .solve(b)
        .ok_or(Error::Singular("linear system"))
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `n_points` values from `lo` to `hi` inclusive, evenly spaced in log scale.
pub fn log_space(lo: f64, hi: f64, n_points: usize) -> Vec<f64> {
    if n_points == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n_points)
        .map(|i| {
            if i == n_points - 1 {
                hi
            } else if i == 0 {
                lo
            } else {
                (a + (b - a) * i as f64 / (n_points - 1) as f64).exp()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0]);
        let e = sym_eigen(&m);
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
        assert!((e.vectors[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_space_endpoints_exact() {
        let g = log_space(1e-4, 1.0, 5);
        assert_eq!(g[0], 1e-4);
        assert_eq!(g[4], 1.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!((g[2] - 1e-2).abs() < 1e-15);
    }
}
