//! Vulnerability proxy engine.
//!
//! The central objects are the extreme eigenvalues of the gradient-matching
//! Hessian at the ground-truth input. For the L2 distance that Hessian is
//! `J^T J`; for the cosine distance it is
//! `(1/|g*|^2) J^T (I - g*_hat g*_hat^T) J`, where `J` is the Jacobian of
//! the weight-gradient map in the input. Both are applied matrix-free:
//! the inner `J v` is a central finite difference of the gradient map, the
//! outer `J^T u` reuses cached basis probes. Eigenvalues come from power
//! iteration, the minimum via the shifted operator `lambda_max I - H`.
//!
//! A dense brute-force oracle assembles the full Hessian column by column
//! for small inputs so the matrix-free path can be validated end to end.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradmatch::{GradLossKind, GradTarget};
use crate::smallnet::{Sample, Weights};
use crate::tensorcore::{dot_unchecked, l2_norm, rand_unit_vector, stream_id, Matrix, SeededRng};

/// Anything that maps an input to a flat weight gradient.
///
/// The production implementation wraps the classifier; tests plug in
/// closed-form linear maps.
pub trait GradientMap: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// The classifier's weight-gradient map `x -> dL(f_w(x), y)/dw` with the
/// label held fixed.
pub struct WeightGradientMap<'a> {
    weights: &'a Weights,
    label: usize,
}

impl<'a> WeightGradientMap<'a> {
    pub fn new(weights: &'a Weights, label: usize) -> Self {
        Self { weights, label }
    }
}

impl GradientMap for WeightGradientMap<'_> {
    fn input_dim(&self) -> usize {
        self.weights.spec().input_dim()
    }

    fn output_dim(&self) -> usize {
        self.weights.len()
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.weights.grad_at(x, self.label)
    }
}

/// Matrix-free Hessian-vector product operator anchored at `x_star`.
///
/// Symmetric and positive semi-definite up to finite-difference error.
/// Construction probes the gradient map at `x* +- h e_i` for every basis
/// direction and caches the results; each subsequent product costs two
/// fresh gradient evaluations plus `d` cached dot products.
pub struct HvpOperator<'a> {
    kind: GradLossKind,
    map: &'a dyn GradientMap,
    x_star: Vec<f64>,
    g_star_unit: Vec<f64>,
    g_star_norm: f64,
    fd_step: f64,
    basis_plus: Vec<Vec<f64>>,
    basis_minus: Vec<Vec<f64>>,
}

impl<'a> HvpOperator<'a> {
    pub fn new(
        kind: GradLossKind,
        map: &'a dyn GradientMap,
        x_star: &[f64],
        target: &GradTarget,
        fd_step: f64,
    ) -> Result<Self> {
        if x_star.len() != map.input_dim() {
            return Err(Error::Dimension {
                context: "HvpOperator::new",
                expected: map.input_dim(),
                actual: x_star.len(),
            });
        }
        if target.len() != map.output_dim() {
            return Err(Error::Dimension {
                context: "HvpOperator::new",
                expected: map.output_dim(),
                actual: target.len(),
            });
        }
        if fd_step <= 0.0 {
            return Err(Error::Config("fd_step must be positive".into()));
        }

        let d = x_star.len();
        let mut basis_plus = Vec::with_capacity(d);
        let mut basis_minus = Vec::with_capacity(d);
        let mut probe = x_star.to_vec();
        for i in 0..d {
            probe[i] = x_star[i] + fd_step;
            basis_plus.push(map.gradient(&probe)?);
            probe[i] = x_star[i] - fd_step;
            basis_minus.push(map.gradient(&probe)?);
            probe[i] = x_star[i];
        }

        let g_star_unit: Vec<f64> = target.g_star().iter().map(|g| g / target.norm()).collect();
        Ok(Self {
            kind,
            map,
            x_star: x_star.to_vec(),
            g_star_unit,
            g_star_norm: target.norm(),
            fd_step,
            basis_plus,
            basis_minus,
        })
    }

    pub fn kind(&self) -> GradLossKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.x_star.len()
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    /// Central-difference estimate of the Jacobian-vector product
    /// `J(x*) v`, from two fresh gradient evaluations at `x* +- h v`.
    pub fn jvp(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::Dimension {
                context: "jvp",
                expected: self.dim(),
                actual: v.len(),
            });
        }
        let h = self.fd_step;
        let xp: Vec<f64> = self.x_star.iter().zip(v).map(|(x, vi)| x + h * vi).collect();
        let xm: Vec<f64> = self.x_star.iter().zip(v).map(|(x, vi)| x - h * vi).collect();
        let gp = self.map.gradient(&xp)?;
        let gm = self.map.gradient(&xm)?;
        Ok(gp
            .iter()
            .zip(&gm)
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect())
    }

    /// `J(x*)^T u` via the cached basis probes: coordinate `i` is the
    /// central difference of `x -> <g(x), u>` along `e_i`.
    fn jt(&self, u: &[f64]) -> Vec<f64> {
        let h = self.fd_step;
        (0..self.dim())
            .map(|i| {
                (dot_unchecked(&self.basis_plus[i], u) - dot_unchecked(&self.basis_minus[i], u))
                    / (2.0 * h)
            })
            .collect()
    }

    /// Hessian-vector product.
    ///
    /// L2: `J^T (J v)`. Cosine: `(1/|g*|^2) J^T (I - g*_hat g*_hat^T) (J v)`.
    pub fn hvp(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut u = self.jvp(v)?;
        if self.kind == GradLossKind::Cosine {
            let along = dot_unchecked(&u, &self.g_star_unit);
            for (ui, gi) in u.iter_mut().zip(&self.g_star_unit) {
                *ui -= along * gi;
            }
        }
        let mut out = self.jt(&u);
        if self.kind == GradLossKind::Cosine {
            let s2 = self.g_star_norm * self.g_star_norm;
            for o in &mut out {
                *o /= s2;
            }
        }
        Ok(out)
    }
}

/// Result of one eigenvalue solve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EigenSolve {
    /// Estimate clamped below at zero (the Hessians are PSD; negative
    /// estimates are finite-difference noise).
    pub value: f64,
    /// Unclamped estimate, kept for diagnostics.
    pub raw_value: f64,
    /// `|H v - lambda v|` at the returned vector.
    pub residual: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Power-iteration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIterParams {
    pub max_iters: usize,
    /// Relative Rayleigh-quotient change that counts as converged.
    pub tol: f64,
}

impl Default for PowerIterParams {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-9,
        }
    }
}

fn power_iterate<F>(apply: F, d: usize, params: PowerIterParams, rng: &mut SeededRng) -> Result<EigenSolve>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    params_check(params)?;
    // One fixed deterministic restart in case the first start vector is
    // near-orthogonal to the top eigenspace.
    let mut best: Option<EigenSolve> = None;
    for _attempt in 0..2 {
        let mut v = rand_unit_vector(rng, d);
        let mut w = apply(&v)?;
        let mut lambda = dot_unchecked(&v, &w);
        let mut iters = 1;
        let mut converged = false;
        let mut prev_delta = f64::INFINITY;

        while iters < params.max_iters {
            let n = l2_norm(&w);
            if n == 0.0 {
                // Operator annihilated the vector: spectrum at this
                // vector is exactly zero.
                return Ok(EigenSolve {
                    value: 0.0,
                    raw_value: 0.0,
                    residual: 0.0,
                    iters,
                    converged: true,
                });
            }
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / n;
            }
            w = apply(&v)?;
            let lambda_new = dot_unchecked(&v, &w);
            iters += 1;
            let delta = lambda_new - lambda;
            lambda = lambda_new;
            let scale = lambda.abs().max(f64::MIN_POSITIVE);

            // The Rayleigh quotient converges geometrically with an
            // unknown ratio. A raw |delta| < tol check fires far too
            // early on clustered spectra, where the per-step change is a
            // tiny fraction of the remaining error; extrapolate the
            // geometric tail |delta| * r / (1 - r) instead.
            let r = (delta / prev_delta).abs();
            prev_delta = if delta == 0.0 { f64::INFINITY } else { delta };
            let err_est = if delta == 0.0 {
                0.0
            } else if r < 0.999_999 {
                delta.abs().max(delta.abs() * r / (1.0 - r))
            } else {
                f64::INFINITY
            };
            if err_est <= params.tol * scale {
                converged = true;
                break;
            }
        }

        let residual = {
            let mut r = 0.0;
            for (wi, vi) in w.iter().zip(&v) {
                r += (wi - lambda * vi) * (wi - lambda * vi);
            }
            r.sqrt()
        };
        // Large vector residual despite a settled Rayleigh value marks a
        // degenerate or clustered spectrum; the value is still usable.
        let residual_ok = residual <= 10.0 * params.tol.sqrt() * lambda.abs().max(1e-12);
        let solve = EigenSolve {
            value: lambda.max(0.0),
            raw_value: lambda,
            residual,
            iters,
            converged: converged && residual_ok,
        };
        if solve.converged {
            return Ok(solve);
        }
        if best.is_none_or(|b| solve.residual < b.residual) {
            best = Some(solve);
        }
    }
    Ok(best.unwrap())
}

fn params_check(params: PowerIterParams) -> Result<()> {
    if params.max_iters < 1 {
        return Err(Error::Config("power iteration needs max_iters >= 1".into()));
    }
    if params.tol <= 0.0 {
        return Err(Error::Config("power iteration tol must be positive".into()));
    }
    Ok(())
}

/// Dominant eigenvalue by converged power iteration from a seeded random
/// start: alternate `v <- normalize(H v)` until the Rayleigh quotient
/// settles.
pub fn max_eigen_power(
    op: &HvpOperator,
    params: PowerIterParams,
    rng: &mut SeededRng,
) -> Result<EigenSolve> {
    power_iterate(|v| op.hvp(v), op.dim(), params, rng)
}

/// Minimum eigenvalue via the shifted operator `lambda_max I - H`, whose
/// dominant eigenvalue is `lambda_max - lambda_min`.
pub fn min_eigen_deflate(
    op: &HvpOperator,
    lambda_max: f64,
    params: PowerIterParams,
    rng: &mut SeededRng,
) -> Result<EigenSolve> {
    let shifted = |v: &[f64]| -> Result<Vec<f64>> {
        let hv = op.hvp(v)?;
        Ok(v.iter().zip(&hv).map(|(vi, hvi)| lambda_max * vi - hvi).collect())
    };
    let top = power_iterate(shifted, op.dim(), params, rng)?;
    let raw = lambda_max - top.raw_value.max(0.0);
    Ok(EigenSolve {
        value: raw.max(0.0),
        raw_value: raw,
        residual: top.residual,
        iters: top.iters,
        converged: top.converged,
    })
}

/// Single-step randomized Rayleigh maximization, following the published
/// pseudocode shape: draw a fresh unit vector per round and keep the
/// largest quotient seen. Cross-check mode only; converged power
/// iteration is the production path.
pub fn max_eigen_randomized(op: &HvpOperator, rounds: usize, rng: &mut SeededRng) -> Result<f64> {
    let mut best = 0.0f64;
    for _ in 0..rounds {
        let v = rand_unit_vector(rng, op.dim());
        let hv = op.hvp(&v)?;
        best = best.max(dot_unchecked(&v, &hv));
    }
    Ok(best)
}

/// Baseline proxy: the plain norm of the client gradient, blind to the
/// attacker's loss function.
pub fn grad_norm_proxy(w: &Weights, s: &Sample) -> Result<f64> {
    Ok(l2_norm(&crate::smallnet::grad_weights(w, s)?))
}

/// Loss-agnostic fusion: geometric mean of the L2 maximum and cosine
/// minimum eigenvalues.
pub fn fusion_geomean(l2_max: f64, cos_min: f64) -> f64 {
    debug_assert!(l2_max >= 0.0 && cos_min >= 0.0);
    (l2_max * cos_min).sqrt()
}

/// Explicit dense Hessian for validation.
#[derive(Debug, Clone)]
pub struct DenseHessian {
    /// Symmetrized matrix `(H + H^T) / 2`.
    pub matrix: Matrix,
    /// Relative asymmetry `max|h_ij - h_ji| / frob` before symmetrization;
    /// measures accumulated finite-difference noise.
    pub asymmetry: f64,
}

/// Upper limit on the oracle's input dimension; the assembly is O(d^2)
/// gradient evaluations.
pub const DENSE_ORACLE_MAX_DIM: usize = 256;

/// Assembles the full Hessian column by column from Jacobian-vector
/// products on basis vectors, applying the cosine projection when the
/// operator calls for it.
pub fn dense_hessian_oracle(op: &HvpOperator) -> Result<DenseHessian> {
    let d = op.dim();
    if d > DENSE_ORACLE_MAX_DIM {
        return Err(Error::Contract(format!(
            "dense oracle limited to {DENSE_ORACLE_MAX_DIM} dims, got {d}"
        )));
    }
    let mut raw = Matrix::zeros(d, d);
    let mut e = vec![0.0; d];
    for j in 0..d {
        e[j] = 1.0;
        let col = op.hvp(&e)?;
        for i in 0..d {
            raw.set(i, j, col[i]);
        }
        e[j] = 0.0;
    }

    let frob = raw.frobenius_norm().max(f64::MIN_POSITIVE);
    let asymmetry = raw.max_asymmetry() / frob;
    let mut sym = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            sym.set(i, j, 0.5 * (raw.get(i, j) + raw.get(j, i)));
        }
    }
    Ok(DenseHessian {
        matrix: sym,
        asymmetry,
    })
}

/// All proxies for one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxyRecord {
    pub sample_id: usize,
    pub grad_norm: f64,
    pub l2_max: f64,
    pub l2_min: f64,
    pub cos_max: f64,
    pub cos_min: f64,
    pub fusion: f64,
    pub solves: ProxySolves,
}

/// Iteration counts and residuals behind each eigenvalue in a record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxySolves {
    pub l2_max: EigenSolve,
    pub l2_min: EigenSolve,
    pub cos_max: EigenSolve,
    pub cos_min: EigenSolve,
}

/// Proxy computation controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyParams {
    pub power: PowerIterParams,
    pub fd_step: f64,
}

impl Default for ProxyParams {
    fn default() -> Self {
        Self {
            power: PowerIterParams::default(),
            fd_step: 1e-4,
        }
    }
}

// Stream tags for the four eigen-solves of one sample.
const STREAM_L2_MAX: u64 = 1;
const STREAM_L2_MIN: u64 = 2;
const STREAM_COS_MAX: u64 = 3;
const STREAM_COS_MIN: u64 = 4;

/// Computes every proxy for one sample: gradient norm, both Hessian
/// spectra at the ground truth, and the fusion. Deterministic given
/// `seed`; the four eigen-solves draw from fixed derived streams.
pub fn compute_proxies(
    w: &Weights,
    sample: &Sample,
    sample_id: usize,
    params: ProxyParams,
    seed: u64,
) -> Result<ProxyRecord> {
    let target = GradTarget::from_sample(w, sample)?;
    let map = WeightGradientMap::new(w, sample.label);
    let grad_norm = target.norm();

    let op_l2 = HvpOperator::new(GradLossKind::L2, &map, &sample.pixels, &target, params.fd_step)?;
    let op_cos = HvpOperator::new(
        GradLossKind::Cosine,
        &map,
        &sample.pixels,
        &target,
        params.fd_step,
    )?;

    let rng_for = |tag: u64| SeededRng::new(seed, stream_id(&[sample_id as u64, tag]));

    let l2_max = max_eigen_power(&op_l2, params.power, &mut rng_for(STREAM_L2_MAX))?;
    let l2_min = min_eigen_deflate(&op_l2, l2_max.value, params.power, &mut rng_for(STREAM_L2_MIN))?;
    let cos_max = max_eigen_power(&op_cos, params.power, &mut rng_for(STREAM_COS_MAX))?;
    let cos_min =
        min_eigen_deflate(&op_cos, cos_max.value, params.power, &mut rng_for(STREAM_COS_MIN))?;

    Ok(ProxyRecord {
        sample_id,
        grad_norm,
        l2_max: l2_max.value,
        l2_min: l2_min.value,
        cos_max: cos_max.value,
        cos_min: cos_min.value,
        fusion: fusion_geomean(l2_max.value, cos_min.value),
        solves: ProxySolves {
            l2_max,
            l2_min,
            cos_max,
            cos_min,
        },
    })
}
