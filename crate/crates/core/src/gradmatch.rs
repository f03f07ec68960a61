//! Gradient-matching losses, total-variation prior, and the attack
//! objective's input gradient.
//!
//! The attack minimizes `gm_loss(g_w(x, y), g*) + alpha_tv * tv(x)` over
//! the image `x` with the label fixed. Its gradient in `x` is computed by
//! coordinate central finite differences of the scalar gradient-matching
//! term; the TV term is analytic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smallnet::{Scratch, Weights};
use crate::tensorcore::{dot_unchecked, l2_norm};

/// Which distance the attack (and its Hessian proxies) uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GradLossKind {
    L2,
    Cosine,
}

impl GradLossKind {
    /// Short tag used in CSV columns and file names.
    pub fn tag(self) -> &'static str {
        match self {
            GradLossKind::L2 => "l2",
            GradLossKind::Cosine => "cos",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(GradLossKind::L2),
            "cos" | "cosine" => Ok(GradLossKind::Cosine),
            other => Err(Error::Config(format!("unknown gradient loss kind '{other}'"))),
        }
    }
}

/// The client's ground-truth weight gradient with its cached norm.
#[derive(Debug, Clone)]
pub struct GradTarget {
    g_star: Vec<f64>,
    norm: f64,
}

impl GradTarget {
    /// Rejects zero and non-finite gradients: a zero target makes cosine
    /// distance meaningless and carries no signal to invert.
    pub fn new(g_star: Vec<f64>) -> Result<Self> {
        if g_star.iter().any(|g| !g.is_finite()) {
            return Err(Error::Data("gradient target must be finite".into()));
        }
        let norm = l2_norm(&g_star);
        if norm <= 0.0 {
            return Err(Error::DegenerateGradient(
                "zero gradient target rejected at construction".into(),
            ));
        }
        Ok(Self { g_star, norm })
    }

    /// Target built from the client side: `g* = dL/dw` at the sample.
    pub fn from_sample(w: &Weights, s: &crate::smallnet::Sample) -> Result<Self> {
        Self::new(crate::smallnet::grad_weights(w, s)?)
    }

    pub fn g_star(&self) -> &[f64] {
        &self.g_star
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn len(&self) -> usize {
        self.g_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_star.is_empty()
    }
}

/// Height x width of the flattened image; both at least 2 so the TV prior
/// always has neighbor pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    height: usize,
    width: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::Config(format!(
                "image shape {height}x{width}: both sides must be >= 2"
            )));
        }
        Ok(Self { height, width })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn check(&self, x: &[f64], context: &'static str) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::Dimension {
                context,
                expected: self.len(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}

fn check_target_len(g: &[f64], t: &GradTarget, context: &'static str) -> Result<()> {
    if g.len() != t.len() {
        return Err(Error::Dimension {
            context,
            expected: t.len(),
            actual: g.len(),
        });
    }
    Ok(())
}

/// Gradient-matching loss between a candidate gradient and the target.
///
/// L2 is the squared Euclidean distance; cosine is `1 - cos(g, g*)`,
/// always in `[0, 2]`.
pub fn gm_loss(kind: GradLossKind, g: &[f64], t: &GradTarget) -> Result<f64> {
    check_target_len(g, t, "gm_loss")?;
    match kind {
        GradLossKind::L2 => Ok(g
            .iter()
            .zip(t.g_star())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()),
        GradLossKind::Cosine => {
            let gn = l2_norm(g);
            if gn <= 0.0 {
                return Err(Error::DegenerateGradient(
                    "cosine distance undefined for zero candidate gradient".into(),
                ));
            }
            let cos = dot_unchecked(g, t.g_star()) / (gn * t.norm());
            Ok(1.0 - cos)
        }
    }
}

/// Gradient of [`gm_loss`] with respect to the candidate gradient `g`.
///
/// L2: `2 (g - g*)`. Cosine: `-(1/|g|) (I - g_hat g_hat^T) g*_hat`, which
/// is orthogonal to `g` by construction.
pub fn gm_grad_wrt_g(kind: GradLossKind, g: &[f64], t: &GradTarget) -> Result<Vec<f64>> {
    check_target_len(g, t, "gm_grad_wrt_g")?;
    match kind {
        GradLossKind::L2 => Ok(g.iter().zip(t.g_star()).map(|(a, b)| 2.0 * (a - b)).collect()),
        GradLossKind::Cosine => {
            let gn = l2_norm(g);
            if gn <= 0.0 {
                return Err(Error::DegenerateGradient(
                    "cosine gradient undefined for zero candidate gradient".into(),
                ));
            }
            let cos_over_gn = dot_unchecked(g, t.g_star()) / (gn * gn * t.norm());
            Ok(g
                .iter()
                .zip(t.g_star())
                .map(|(&gi, &si)| -(si / (gn * t.norm()) - cos_over_gn * gi / gn))
                .collect())
        }
    }
}

/// Smoothed anisotropic total variation: sum over horizontal and vertical
/// neighbor pairs of `sqrt(diff^2 + eps^2)`. A constant image scores the
/// smoothing floor `pairs * eps`.
pub fn tv_loss(x: &[f64], shape: ImageShape, eps: f64) -> Result<f64> {
    shape.check(x, "tv_loss")?;
    let (h, w) = (shape.height(), shape.width());
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                total += ((x[i] - x[i + 1]).powi(2) + eps * eps).sqrt();
            }
            if r + 1 < h {
                total += ((x[i] - x[i + w]).powi(2) + eps * eps).sqrt();
            }
        }
    }
    Ok(total)
}

/// Analytic gradient of [`tv_loss`]; finite everywhere thanks to `eps`.
pub fn tv_grad(x: &[f64], shape: ImageShape, eps: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    tv_grad_into(x, shape, eps, &mut out)?;
    Ok(out)
}

fn tv_grad_into(x: &[f64], shape: ImageShape, eps: f64, out: &mut [f64]) -> Result<()> {
    shape.check(x, "tv_grad")?;
    out.fill(0.0);
    let (h, w) = (shape.height(), shape.width());
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                let d = x[i] - x[i + 1];
                let g = d / (d * d + eps * eps).sqrt();
                out[i] += g;
                out[i + 1] -= g;
            }
            if r + 1 < h {
                let d = x[i] - x[i + w];
                let g = d / (d * d + eps * eps).sqrt();
                out[i] += g;
                out[i + w] -= g;
            }
        }
    }
    Ok(())
}

/// Reusable evaluator for the attack objective at a fixed
/// `(weights, label, target)`. Owns every buffer the 2d-probe finite
/// difference loop needs, so per-step evaluation is allocation-free.
pub struct ObjectiveGrad<'a> {
    weights: &'a Weights,
    label: usize,
    kind: GradLossKind,
    target: &'a GradTarget,
    alpha_tv: f64,
    shape: ImageShape,
    fd_step: f64,
    scratch: Scratch,
    gbuf: Vec<f64>,
    xbuf: Vec<f64>,
    tvbuf: Vec<f64>,
}

/// Smoothing constant keeping the TV prior differentiable at zero jumps.
pub const TV_EPS: f64 = 1e-6;

impl<'a> ObjectiveGrad<'a> {
    pub fn new(
        weights: &'a Weights,
        label: usize,
        kind: GradLossKind,
        target: &'a GradTarget,
        alpha_tv: f64,
        shape: ImageShape,
        fd_step: f64,
    ) -> Result<Self> {
        if shape.len() != weights.spec().input_dim() {
            return Err(Error::Dimension {
                context: "ObjectiveGrad::new",
                expected: weights.spec().input_dim(),
                actual: shape.len(),
            });
        }
        if target.len() != weights.len() {
            return Err(Error::Dimension {
                context: "ObjectiveGrad::new",
                expected: weights.len(),
                actual: target.len(),
            });
        }
        if fd_step <= 0.0 {
            return Err(Error::Config("fd_step must be positive".into()));
        }
        Ok(Self {
            weights,
            label,
            kind,
            target,
            alpha_tv,
            shape,
            fd_step,
            scratch: Scratch::new(weights.spec()),
            gbuf: vec![0.0; weights.len()],
            xbuf: Vec::new(),
            tvbuf: vec![0.0; shape.len()],
        })
    }

    /// Gradient-matching loss at `x` (without the TV term).
    pub fn gm_loss_at(&mut self, x: &[f64]) -> Result<f64> {
        self.shape.check(x, "gm_loss_at")?;
        self.weights
            .grad_into(x, self.label, &mut self.gbuf, &mut self.scratch);
        gm_loss(self.kind, &self.gbuf, self.target)
    }

    /// Full objective gradient at `x`: central finite differences of the
    /// gradient-matching term plus `alpha_tv` times the analytic TV
    /// gradient. Errors if any probe point has a zero candidate gradient
    /// under the cosine loss, or if the result is not finite.
    pub fn eval(&mut self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.shape.check(x, "attack_objective_grad")?;
        if out.len() != x.len() {
            return Err(Error::Dimension {
                context: "attack_objective_grad",
                expected: x.len(),
                actual: out.len(),
            });
        }

        self.xbuf.clear();
        self.xbuf.extend_from_slice(x);
        let h = self.fd_step;
        for i in 0..x.len() {
            let xi = self.xbuf[i];
            self.xbuf[i] = xi + h;
            self.weights
                .grad_into(&self.xbuf, self.label, &mut self.gbuf, &mut self.scratch);
            let plus = gm_loss(self.kind, &self.gbuf, self.target)?;
            self.xbuf[i] = xi - h;
            self.weights
                .grad_into(&self.xbuf, self.label, &mut self.gbuf, &mut self.scratch);
            let minus = gm_loss(self.kind, &self.gbuf, self.target)?;
            self.xbuf[i] = xi;
            out[i] = (plus - minus) / (2.0 * h);
        }

        if self.alpha_tv != 0.0 {
            tv_grad_into(x, self.shape, TV_EPS, &mut self.tvbuf)?;
            for (o, t) in out.iter_mut().zip(&self.tvbuf) {
                *o += self.alpha_tv * t;
            }
        }

        if out.iter().any(|g| !g.is_finite()) {
            return Err(Error::Contract(
                "attack objective gradient is not finite".into(),
            ));
        }
        Ok(())
    }
}

/// One-shot convenience wrapper around [`ObjectiveGrad`].
#[allow(clippy::too_many_arguments)]
pub fn attack_objective_grad(
    w: &Weights,
    x: &[f64],
    label: usize,
    kind: GradLossKind,
    target: &GradTarget,
    alpha_tv: f64,
    shape: ImageShape,
    fd_step: f64,
) -> Result<Vec<f64>> {
    let mut obj = ObjectiveGrad::new(w, label, kind, target, alpha_tv, shape, fd_step)?;
    let mut out = vec![0.0; x.len()];
    obj.eval(x, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smallnet::{init_weights, Activation, NetSpec, Sample};
    use crate::tensorcore::{dot, SeededRng};

    fn target(v: Vec<f64>) -> GradTarget {
        GradTarget::new(v).unwrap()
    }

    #[test]
    fn target_rejects_zero_gradient() {
        assert!(matches!(
            GradTarget::new(vec![0.0, 0.0]),
            Err(Error::DegenerateGradient(_))
        ));
    }

    #[test]
    fn gm_loss_perfect_match_is_zero() {
        let t = target(vec![1.0, -2.0, 0.5]);
        let g = t.g_star().to_vec();
        assert_eq!(gm_loss(GradLossKind::L2, &g, &t).unwrap(), 0.0);
        assert!(gm_loss(GradLossKind::Cosine, &g, &t).unwrap().abs() < 1e-15);
    }

    #[test]
    fn gm_loss_unit_offset_and_orthogonal() {
        let t = target(vec![3.0, 0.0]);
        // g - g* is the unit vector e_1.
        assert_eq!(gm_loss(GradLossKind::L2, &[3.0, 1.0], &t).unwrap(), 1.0 - 0.0 + 0.0);
        assert!((gm_loss(GradLossKind::Cosine, &[0.0, 5.0], &t).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gm_loss_cosine_range_and_scale_invariance() {
        let t = target(vec![1.0, 2.0, -1.0]);
        let mut rng = SeededRng::new(3, 0);
        for _ in 0..200 {
            let g: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            if crate::tensorcore::l2_norm(&g) == 0.0 {
                continue;
            }
            let v = gm_loss(GradLossKind::Cosine, &g, &t).unwrap();
            assert!((0.0..=2.0 + 1e-12).contains(&v));
            let scaled: Vec<f64> = g.iter().map(|x| 7.5 * x).collect();
            let vs = gm_loss(GradLossKind::Cosine, &scaled, &t).unwrap();
            assert!((v - vs).abs() < 1e-12);
        }
    }

    #[test]
    fn gm_grad_zero_at_minima() {
        let t = target(vec![1.0, 2.0, 3.0]);
        let g = t.g_star().to_vec();
        assert!(gm_grad_wrt_g(GradLossKind::L2, &g, &t)
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
        let scaled: Vec<f64> = g.iter().map(|x| 0.3 * x).collect();
        let cg = gm_grad_wrt_g(GradLossKind::Cosine, &scaled, &t).unwrap();
        assert!(crate::tensorcore::l2_norm(&cg) < 1e-14);
    }

    #[test]
    fn gm_grad_matches_finite_differences() {
        let t = target(vec![0.4, -1.1, 2.2, 0.9]);
        let mut rng = SeededRng::new(4, 0);
        for kind in [GradLossKind::L2, GradLossKind::Cosine] {
            for _ in 0..20 {
                let g: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
                let analytic = gm_grad_wrt_g(kind, &g, &t).unwrap();
                for k in 0..4 {
                    let h = 1e-6;
                    let mut gp = g.clone();
                    gp[k] += h;
                    let mut gm = g.clone();
                    gm[k] -= h;
                    let fd = (gm_loss(kind, &gp, &t).unwrap() - gm_loss(kind, &gm, &t).unwrap())
                        / (2.0 * h);
                    let rel = (fd - analytic[k]).abs() / analytic[k].abs().max(1e-6);
                    assert!(rel <= 1e-6, "{kind:?} coord {k}: {fd} vs {}", analytic[k]);
                }
            }
        }
    }

    #[test]
    fn cosine_grad_orthogonal_to_g() {
        let t = target(vec![1.0, -0.5, 0.25, 2.0]);
        let mut rng = SeededRng::new(5, 0);
        for _ in 0..100 {
            let g: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
            let grad = gm_grad_wrt_g(GradLossKind::Cosine, &g, &t).unwrap();
            let d = dot(&grad, &g).unwrap().abs();
            let bound = 1e-10 * crate::tensorcore::l2_norm(&grad) * crate::tensorcore::l2_norm(&g);
            assert!(d <= bound.max(1e-16));
        }
    }

    #[test]
    fn tv_constant_image_floor_and_zero_grad() {
        let shape = ImageShape::new(3, 3).unwrap();
        let x = vec![0.42; 9];
        let eps = 1e-6;
        // 3x3 has 6 horizontal + 6 vertical neighbor pairs.
        let pairs = 12.0;
        assert!((tv_loss(&x, shape, eps).unwrap() - pairs * eps).abs() < 1e-18);
        assert!(tv_grad(&x, shape, eps).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn tv_two_by_two_enumerated() {
        // Rows [0,1] and [0,1]: two horizontal unit jumps, zero vertical.
        let shape = ImageShape::new(2, 2).unwrap();
        let x = vec![0.0, 1.0, 0.0, 1.0];
        let v = tv_loss(&x, shape, 1e-9).unwrap();
        assert!((v - 2.0).abs() < 1e-6);
    }

    #[test]
    fn tv_grad_matches_finite_differences() {
        let shape = ImageShape::new(8, 8).unwrap();
        let mut rng = SeededRng::new(6, 0);
        let x: Vec<f64> = (0..64).map(|_| rng.uniform(0.0, 1.0)).collect();
        let eps = 1e-3; // keep the loss well-conditioned for the probe
        let analytic = tv_grad(&x, shape, eps).unwrap();
        for k in [0usize, 7, 13, 36, 63] {
            let h = 1e-7;
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd = (tv_loss(&xp, shape, eps).unwrap() - tv_loss(&xm, shape, eps).unwrap())
                / (2.0 * h);
            // 1e-6 absolute, relative once coordinates exceed unit size.
            let err = (fd - analytic[k]).abs() / analytic[k].abs().max(1.0);
            assert!(err <= 1e-6, "coord {k}: {fd} vs {}", analytic[k]);
        }
    }

    #[test]
    fn objective_grad_zero_at_ground_truth() {
        let spec = NetSpec::new(vec![4, 3, 2], Activation::Tanh).unwrap();
        let w = init_weights(&spec, &mut SeededRng::new(7, 0));
        let shape = ImageShape::new(2, 2).unwrap();
        let s = Sample::new(vec![0.2, 0.8, 0.5, 0.6], 1).unwrap();
        let t = GradTarget::from_sample(&w, &s).unwrap();

        // At the global minimum the probe differences cancel up to the
        // O(h^2) truncation term; a 3e-5 step keeps that well under 1e-8.
        let g =
            attack_objective_grad(&w, &s.pixels, s.label, GradLossKind::L2, &t, 0.0, shape, 3e-5)
                .unwrap();
        assert!(crate::tensorcore::l2_norm(&g) < 1e-8, "{:?}", g);
    }

    #[test]
    fn objective_grad_matches_dense_jacobian_route() {
        // Softmax regression: build J column-by-column from central
        // differences of the gradient map, then compare the probe-based
        // objective gradient with J^T * 2(g - g*).
        let spec = NetSpec::new(vec![4, 3], Activation::Tanh).unwrap();
        let w = init_weights(&spec, &mut SeededRng::new(8, 0));
        let shape = ImageShape::new(2, 2).unwrap();
        let x_star = vec![0.3, 0.7, 0.1, 0.9];
        let label = 2usize;
        let t = GradTarget::new(w.grad_at(&x_star, label).unwrap()).unwrap();

        let x = vec![0.35, 0.6, 0.15, 0.8];
        let h = 1e-5;
        let n = w.len();
        let mut jt_route = vec![0.0; 4];
        let g_x = w.grad_at(&x, label).unwrap();
        let resid: Vec<f64> = g_x
            .iter()
            .zip(t.g_star())
            .map(|(a, b)| 2.0 * (a - b))
            .collect();
        for col in 0..4 {
            let mut xp = x.clone();
            xp[col] += h;
            let mut xm = x.clone();
            xm[col] -= h;
            let gp = w.grad_at(&xp, label).unwrap();
            let gm = w.grad_at(&xm, label).unwrap();
            let mut acc = 0.0;
            for k in 0..n {
                acc += (gp[k] - gm[k]) / (2.0 * h) * resid[k];
            }
            jt_route[col] = acc;
        }

        let probe =
            attack_objective_grad(&w, &x, label, GradLossKind::L2, &t, 0.0, shape, 1e-4).unwrap();
        for (a, b) in probe.iter().zip(&jt_route) {
            assert!(
                (a - b).abs() <= 1e-6 * b.abs().max(1.0),
                "probe {a} vs Jt route {b}"
            );
        }
    }

    #[test]
    fn objective_grad_tv_term_vanishes_on_constant_match() {
        let spec = NetSpec::new(vec![4, 3, 2], Activation::Softplus).unwrap();
        let w = init_weights(&spec, &mut SeededRng::new(9, 0));
        let shape = ImageShape::new(2, 2).unwrap();
        let s = Sample::new(vec![0.5; 4], 0).unwrap();
        let t = GradTarget::from_sample(&w, &s).unwrap();
        let g =
            attack_objective_grad(&w, &s.pixels, s.label, GradLossKind::L2, &t, 0.01, shape, 1e-4)
                .unwrap();
        // Both the matching term (at its minimum) and the TV gradient
        // (constant image) vanish.
        assert!(crate::tensorcore::l2_norm(&g) < 1e-8);
    }

    #[test]
    fn objective_grad_halving_step_shrinks_error_quadratically() {
        let spec = NetSpec::new(vec![4, 4, 2], Activation::Tanh).unwrap();
        let w = init_weights(&spec, &mut SeededRng::new(10, 0));
        let shape = ImageShape::new(2, 2).unwrap();
        let s = Sample::new(vec![0.2, 0.4, 0.6, 0.8], 1).unwrap();
        let t = GradTarget::from_sample(&w, &s).unwrap();
        let x = vec![0.25, 0.5, 0.55, 0.7];

        let reference =
            attack_objective_grad(&w, &x, s.label, GradLossKind::L2, &t, 0.0, shape, 2.5e-3)
                .unwrap();
        let coarse =
            attack_objective_grad(&w, &x, s.label, GradLossKind::L2, &t, 0.0, shape, 4.0e-2)
                .unwrap();
        let fine =
            attack_objective_grad(&w, &x, s.label, GradLossKind::L2, &t, 0.0, shape, 2.0e-2)
                .unwrap();

        let err = |g: &[f64]| -> f64 {
            g.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let (ec, ef) = (err(&coarse), err(&fine));
        // Central differences are O(h^2): halving h cuts the error ~4x.
        let ratio = ec / ef;
        assert!(
            (2.5..6.0).contains(&ratio),
            "expected ~4x error reduction, got {ratio} ({ec} / {ef})"
        );
    }
}
