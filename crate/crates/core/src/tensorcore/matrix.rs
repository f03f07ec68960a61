//! Dense row-major matrix.

use crate::error::{Error, Result};

/// Dense matrix, row-major `f64` storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from row-major data; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "Matrix::from_vec",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Row slice, handy for iterating without index arithmetic.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension {
                context: "matvec",
                expected: self.cols,
                actual: v.len(),
            });
        }
        Ok((0..self.rows)
            .map(|r| super::dot_unchecked(self.row(r), v))
            .collect())
    }

    /// `self^T * v`.
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::Dimension {
                context: "matvec_t",
                expected: self.rows,
                actual: v.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, &m) in out.iter_mut().zip(self.row(r)) {
                *o += m * vr;
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        super::l2_norm(&self.data)
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`; zero for symmetric input.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_identity_and_diag() {
        let v = vec![0.3, -1.2, 4.0];
        assert_eq!(Matrix::identity(3).matvec(&v).unwrap(), v);

        let d = Matrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(d.matvec(&[1.0, 1.0]).unwrap(), vec![3.0, 1.0]);
    }

    #[test]
    fn matvec_t_hand_computed() {
        // [[1,2],[3,4]]^T * [1,1] = [1+3, 2+4]
        let m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.matvec_t(&[1.0, 1.0]).unwrap(), vec![4.0, 6.0]);
    }

    #[test]
    fn dimension_errors() {
        let m = Matrix::zeros(2, 3);
        assert!(m.matvec(&[1.0, 2.0]).is_err());
        assert!(m.matvec_t(&[1.0, 2.0, 3.0]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn gram_positivity() {
        // v^T (M^T M) v >= 0 for any rectangular M.
        let m = Matrix::from_vec(3, 2, vec![1.0, -2.0, 0.5, 4.0, -1.0, 0.0]).unwrap();
        for v in [[1.0, 0.0], [0.3, -0.7], [-2.0, 5.0]] {
            let mv = m.matvec(&v).unwrap();
            let mtmv = m.matvec_t(&mv).unwrap();
            assert!(super::super::dot(&mtmv, &v).unwrap() >= 0.0);
        }
    }
}
