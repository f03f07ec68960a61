//! Minimal dense linear algebra and deterministic randomness.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`; [`Matrix`] is dense row-major.
//! Nothing here is tuned for speed beyond what a few hundred dimensions
//! need. [`SeededRng`] provides reproducible, stream-addressable
//! randomness so parallel scheduling never changes results.

mod eigen;
mod matrix;
mod rng;

pub use eigen::{sym_eigen_dense, EigenDecomposition};
pub use matrix::Matrix;
pub use rng::{stream_id, SeededRng};

use crate::error::{Error, Result};

/// Inner product of two equal-length vectors.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "dot",
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(dot_unchecked(a, b))
}

/// `dot` without the length check, for callers that construct both sides.
#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn l2_norm(a: &[f64]) -> f64 {
    dot_unchecked(a, a).sqrt()
}

/// Standard-normal draw normalized to unit length.
///
/// The zero draw is redrawn, so the result always has norm 1.
pub fn rand_unit_vector(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    assert!(d >= 1, "rand_unit_vector needs d >= 1");
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let n = l2_norm(&v);
        if n > 0.0 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}
