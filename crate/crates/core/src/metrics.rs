//! Image similarity scores and Spearman rank correlation.
//!
//! MSE, PSNR, and SSIM grade a reconstruction against its ground truth;
//! Spearman correlation (average-rank ties, realized as rank-then-Pearson)
//! measures how monotonically a vulnerability proxy tracks those scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradmatch::ImageShape;

/// PSNR reported for a perfect reconstruction, keeping scores finite and
/// sortable.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_DYNAMIC_RANGE: f64 = 1.0;

/// All three similarity scores for one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScores {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Mean squared pixel difference.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "mse",
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB for unit dynamic range, capped at
/// [`PSNR_CAP_DB`] when the images match exactly.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    psnr_with(a, b, 1.0, PSNR_CAP_DB)
}

pub fn psnr_with(a: &[f64], b: &[f64], max_val: f64, cap: f64) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(cap);
    }
    Ok((10.0 * (max_val * max_val / e).log10()).min(cap))
}

/// SSIM window strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SsimWindow {
    /// One window covering the whole image; right for 8x8 desk-scale
    /// inputs where an 8x8 sliding window would be the image anyway.
    Global,
    Sliding { size: usize, stride: usize },
}

/// Structural similarity with the conventional stabilizers. Global window
/// for images up to 8x8, sliding 8x8 stride-1 otherwise.
pub fn ssim(a: &[f64], b: &[f64], shape: ImageShape) -> Result<f64> {
    let window = if shape.height() <= 8 && shape.width() <= 8 {
        SsimWindow::Global
    } else {
        SsimWindow::Sliding { size: 8, stride: 1 }
    };
    ssim_windowed(a, b, shape, window)
}

pub fn ssim_windowed(a: &[f64], b: &[f64], shape: ImageShape, window: SsimWindow) -> Result<f64> {
    if a.len() != shape.len() || b.len() != shape.len() {
        return Err(Error::Dimension {
            context: "ssim",
            expected: shape.len(),
            actual: if a.len() != shape.len() { a.len() } else { b.len() },
        });
    }
    match window {
        SsimWindow::Global => Ok(ssim_one_window(
            a,
            b,
            shape.width(),
            0,
            0,
            shape.height(),
            shape.width(),
        )),
        SsimWindow::Sliding { size, stride } => {
            if size > shape.height() || size > shape.width() {
                return Err(Error::Contract(format!(
                    "ssim window {size} larger than image {}x{}",
                    shape.height(),
                    shape.width()
                )));
            }
            if stride == 0 {
                return Err(Error::Contract("ssim stride must be positive".into()));
            }
            let mut total = 0.0;
            let mut count = 0usize;
            let mut r = 0;
            while r + size <= shape.height() {
                let mut c = 0;
                while c + size <= shape.width() {
                    total += ssim_one_window(a, b, shape.width(), r, c, size, size);
                    count += 1;
                    c += stride;
                }
                r += stride;
            }
            Ok(total / count as f64)
        }
    }
}

fn ssim_one_window(
    a: &[f64],
    b: &[f64],
    row_len: usize,
    r0: usize,
    c0: usize,
    h: usize,
    w: usize,
) -> f64 {
    let n = (h * w) as f64;
    let mut mu_a = 0.0;
    let mut mu_b = 0.0;
    for r in r0..r0 + h {
        for c in c0..c0 + w {
            mu_a += a[r * row_len + c];
            mu_b += b[r * row_len + c];
        }
    }
    mu_a /= n;
    mu_b /= n;

    let mut var_a = 0.0;
    let mut var_b = 0.0;
    let mut cov = 0.0;
    for r in r0..r0 + h {
        for c in c0..c0 + w {
            let da = a[r * row_len + c] - mu_a;
            let db = b[r * row_len + c] - mu_b;
            var_a += da * da;
            var_b += db * db;
            cov += da * db;
        }
    }
    var_a /= n;
    var_b /= n;
    cov /= n;

    let c1 = (SSIM_K1 * SSIM_DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_DYNAMIC_RANGE).powi(2);
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

/// MSE, PSNR, and SSIM in one call.
pub fn score_pair(reconstruction: &[f64], truth: &[f64], shape: ImageShape) -> Result<SimilarityScores> {
    Ok(SimilarityScores {
        mse: mse(reconstruction, truth)?,
        psnr: psnr(reconstruction, truth)?,
        ssim: ssim(reconstruction, truth, shape)?,
    })
}

/// Average ranks (1-based); tied values share the mean of their range.
/// The rank sum is always `m (m + 1) / 2`.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let m = xs.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap());

    let mut ranks = vec![0.0; m];
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        // positions start..end (0-based) share the mean 1-based rank
        let mean_rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = mean_rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of the average-rank
/// vectors. Errors on fewer than two items or a constant list, where the
/// coefficient is undefined.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "spearman",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation(
            "need at least two observations".into(),
        ));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let m = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / m;
    let mean_b = b.iter().sum::<f64>() / m;
    let mut num = 0.0;
    let mut den_a = 0.0;
    let mut den_b = 0.0;
    for (x, y) in a.iter().zip(b) {
        let da = x - mean_a;
        let db = y - mean_b;
        num += da * db;
        den_a += da * da;
        den_b += db * db;
    }
    if den_a == 0.0 || den_b == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "constant input has no rank variance".into(),
        ));
    }
    Ok((num / (den_a * den_b).sqrt()).clamp(-1.0, 1.0))
}
