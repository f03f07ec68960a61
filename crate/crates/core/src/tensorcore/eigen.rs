//! Full symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! Slow but foolproof brute-force solver used exclusively as the oracle
//! against which the matrix-free power iteration is validated. Dimensions
//! stay in the low hundreds, so the O(n^3)-per-sweep cost is irrelevant.

use crate::error::{Error, Result};
use crate::tensorcore::Matrix;

/// Eigenvalues sorted descending with matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Eigenvalues, largest first.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors; column `k` pairs with `values[k]`.
    pub vectors: Matrix,
}

impl EigenDecomposition {
    /// Column `k` of the eigenvector matrix.
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.vectors.rows())
            .map(|r| self.vectors.get(r, k))
            .collect()
    }
}

const MAX_SWEEPS: usize = 64;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Input must be square and symmetric within `1e-10` relative to its
/// largest entry. Off-diagonal mass is annihilated sweep by sweep until it
/// falls below machine-level tolerance relative to the Frobenius norm.
pub fn sym_eigen_dense(h: &Matrix) -> Result<EigenDecomposition> {
    let n = h.rows();
    if n != h.cols() {
        return Err(Error::Contract(format!(
            "sym_eigen_dense needs a square matrix, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    let scale = h
        .data()
        .iter()
        .fold(0.0f64, |acc, x| acc.max(x.abs()))
        .max(1.0);
    if h.max_asymmetry() > 1e-10 * scale {
        return Err(Error::Contract(format!(
            "sym_eigen_dense needs a symmetric matrix (max asymmetry {:.3e})",
            h.max_asymmetry()
        )));
    }

    let mut a = h.clone();
    let mut v = Matrix::identity(n);
    let frob = h.frobenius_norm();
    // Absolute sweep target; exact zero matrices exit on the first check.
    let off_tol = 1e-14 * frob.max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q).powi(2);
            }
        }
        if off.sqrt() <= off_tol {
            break;
        }

        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                // Rotation angle that zeroes a[p][q].
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).partial_cmp(&a.get(i, i)).unwrap());

    let values: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, new_col, v.get(r, old_col));
        }
    }

    Ok(EigenDecomposition { values, vectors })
}
