//! Gradient inversion optimizer.
//!
//! Adam over the input image against the gradient-matching objective,
//! with multiple seeded restarts; the restart with the lowest final
//! matching loss wins (an attacker cannot see similarity to the ground
//! truth, so loss is the only selectable signal). A separate one-step
//! diagnostic checks the observed loss drop of plain gradient descent
//! against the curvature-derived upper bound.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradmatch::{gm_loss, GradLossKind, GradTarget, ImageShape, ObjectiveGrad};
use crate::smallnet::{Sample, Weights};
use crate::tensorcore::SeededRng;

/// How each restart initializes the candidate image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitMode {
    /// Uniform draw in the pixel box; the standard blind attack.
    RandomUniform,
    /// Ground truth plus `magnitude * sign(normal)` per pixel, clamped:
    /// the local (worst-case attacker) mode.
    LocalPerturb { magnitude: f64 },
}

/// Attack hyperparameters. Defaults: 500 Adam steps at lr 0.05 with the
/// usual moment coefficients, three random restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: GradLossKind,
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub alpha_tv: f64,
    pub restarts: usize,
    pub init_mode: InitMode,
    pub fd_step: f64,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(kind: GradLossKind) -> Self {
        Self {
            kind,
            steps: 500,
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            alpha_tv: 1e-2,
            restarts: 3,
            init_mode: InitMode::RandomUniform,
            fd_step: 1e-4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("attack needs at least one step".into()));
        }
        if self.restarts < 1 {
            return Err(Error::Config("attack needs at least one restart".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("attack lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.fd_step <= 0.0 {
            return Err(Error::Config("fd_step must be positive".into()));
        }
        if let InitMode::LocalPerturb { magnitude } = self.init_mode {
            if magnitude < 0.0 {
                return Err(Error::Config("LocalPerturb magnitude must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// First and second Adam moments.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }
}

/// One bias-corrected Adam update followed by projection onto the pixel
/// box `[0,1]`. `t` is the 1-based step index.
pub fn adam_step(state: &mut AdamState, x: &mut [f64], grad: &[f64], cfg: &AttackConfig, t: usize) {
    debug_assert!(t >= 1);
    debug_assert_eq!(x.len(), grad.len());
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..x.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        x[i] = (x[i] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps)).clamp(0.0, 1.0);
    }
}

/// Outcome of a reconstruction: best restart's image and loss history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackResult {
    pub x_rec: Vec<f64>,
    /// Matching loss of the chosen restart at its initialization.
    pub initial_gm_loss: f64,
    pub final_gm_loss: f64,
    /// Matching loss after each step of the chosen restart; shorter than
    /// `steps` only when the gradient hit the probe noise floor early,
    /// and never empty.
    pub loss_trajectory: Vec<f64>,
    pub per_restart_final: Vec<f64>,
    pub chosen_restart: usize,
    pub wall_time_s: f64,
}

struct RestartOutcome {
    x: Vec<f64>,
    initial: f64,
    traj: Vec<f64>,
}

/// Runs the full multi-restart attack for one sample.
///
/// Deterministic given `cfg.seed`: restart `r` draws from stream `r` of
/// that seed. Restarts that hit a degenerate cosine gradient are dropped;
/// if every restart degenerates the attack fails with diagnostics.
pub fn run_attack(
    cfg: &AttackConfig,
    w: &Weights,
    target: &GradTarget,
    sample: &Sample,
    shape: ImageShape,
) -> Result<AttackResult> {
    cfg.validate()?;
    if sample.pixels.len() != shape.len() {
        return Err(Error::Dimension {
            context: "run_attack",
            expected: shape.len(),
            actual: sample.pixels.len(),
        });
    }
    let started = Instant::now();

    let mut outcomes: Vec<Option<RestartOutcome>> = Vec::with_capacity(cfg.restarts);
    let mut failures: Vec<String> = Vec::new();
    for r in 0..cfg.restarts {
        match run_one_restart(cfg, w, target, sample, shape, r) {
            Ok(out) => outcomes.push(Some(out)),
            Err(Error::DegenerateGradient(msg)) => {
                failures.push(format!("restart {r}: {msg}"));
                outcomes.push(None);
            }
            Err(e) => return Err(e),
        }
    }

    let per_restart_final: Vec<f64> = outcomes
        .iter()
        .map(|o| o.as_ref().map_or(f64::INFINITY, |o| *o.traj.last().unwrap()))
        .collect();
    let chosen = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.is_some())
        .map(|(r, _)| r)
        .min_by(|&a, &b| per_restart_final[a].partial_cmp(&per_restart_final[b]).unwrap());
    let Some(chosen) = chosen else {
        return Err(Error::AttackFailed(format!(
            "all {} restarts degenerate: {}",
            cfg.restarts,
            failures.join("; ")
        )));
    };
    let won = outcomes[chosen].take().unwrap();

    Ok(AttackResult {
        x_rec: won.x,
        initial_gm_loss: won.initial,
        final_gm_loss: per_restart_final[chosen],
        loss_trajectory: won.traj,
        per_restart_final,
        chosen_restart: chosen,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn run_one_restart(
    cfg: &AttackConfig,
    w: &Weights,
    target: &GradTarget,
    sample: &Sample,
    shape: ImageShape,
    restart: usize,
) -> Result<RestartOutcome> {
    let mut rng = SeededRng::new(cfg.seed, restart as u64);
    let mut x = init_candidate(cfg.init_mode, &sample.pixels, &mut rng);
    let mut obj = ObjectiveGrad::new(
        w,
        sample.label,
        cfg.kind,
        target,
        cfg.alpha_tv,
        shape,
        cfg.fd_step,
    )?;

    let initial = obj.gm_loss_at(&x)?;
    let mut state = AdamState::new(x.len());
    let mut grad = vec![0.0; x.len()];
    let mut traj = Vec::with_capacity(cfg.steps);
    // Central differences with step h carry O(h^2) truncation noise per
    // coordinate. Adam normalizes away gradient scale, so stepping on
    // pure noise still moves x by ~lr; stop once every coordinate is
    // below the noise floor instead.
    let noise_floor = 10.0 * cfg.fd_step * cfg.fd_step;
    for t in 1..=cfg.steps {
        obj.eval(&x, &mut grad)?;
        if grad.iter().all(|g| g.abs() <= noise_floor) {
            break;
        }
        adam_step(&mut state, &mut x, &grad, cfg, t);
        traj.push(obj.gm_loss_at(&x)?);
    }
    if traj.is_empty() {
        traj.push(initial);
    }
    Ok(RestartOutcome { x, initial, traj })
}

fn init_candidate(mode: InitMode, x_star: &[f64], rng: &mut SeededRng) -> Vec<f64> {
    match mode {
        InitMode::RandomUniform => x_star.iter().map(|_| rng.uniform(0.0, 1.0)).collect(),
        InitMode::LocalPerturb { magnitude } => x_star
            .iter()
            .map(|&p| {
                let sign = if rng.standard_normal() >= 0.0 { 1.0 } else { -1.0 };
                (p + magnitude * sign).clamp(0.0, 1.0)
            })
            .collect(),
    }
}

/// One-step descent record comparing the observed matching-loss drop with
/// the curvature upper bound.
///
/// `lambda_max` / `lambda_min` are the proxy engine's Hessian eigenvalues
/// (L2 kind, `H = J^T J` convention); their square roots estimate the
/// bi-Lipschitz constants of the gradient map, so the drop bound is
/// `|grad|^2 / (4 lambda_min)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCheckRecord {
    pub mu: f64,
    pub drop_observed: f64,
    pub drop_upper_bound_t2: f64,
    pub grad_sq_norm: f64,
    /// Bi-Lipschitz upper estimate `sqrt(lambda_max)`.
    pub l_hat: f64,
    /// Bi-Lipschitz lower estimate `sqrt(lambda_min)`.
    pub m_hat: f64,
    /// `None` when `lambda_min = 0` leaves the bound undefined.
    pub satisfied: Option<bool>,
}

impl BoundCheckRecord {
    /// Step size at which the one-step drop guarantee is stated:
    /// `1 / (2 L^2)`.
    pub fn theorem1_step(&self) -> f64 {
        1.0 / (2.0 * self.l_hat * self.l_hat)
    }

    /// Guaranteed minimum drop at [`Self::theorem1_step`]:
    /// `|grad|^2 / (4 L^2)`.
    pub fn theorem1_lower_bound(&self) -> f64 {
        self.grad_sq_norm / (4.0 * self.l_hat * self.l_hat)
    }
}

/// Performs one plain gradient-descent step `x - mu * grad` on the L2
/// matching loss from `x_eval` (expected near the ground truth) and
/// records the observed drop against the Theorem-2-style upper bound.
#[allow(clippy::too_many_arguments)]
pub fn bound_check_one_step(
    w: &Weights,
    sample: &Sample,
    x_eval: &[f64],
    shape: ImageShape,
    mu: f64,
    lambda_max: f64,
    lambda_min: f64,
    fd_step: f64,
    tol: f64,
) -> Result<BoundCheckRecord> {
    if !(lambda_max >= lambda_min && lambda_min >= 0.0) {
        return Err(Error::Contract(format!(
            "need lambda_max >= lambda_min >= 0, got {lambda_max} and {lambda_min}"
        )));
    }
    let target = GradTarget::from_sample(w, sample)?;
    let mut obj = ObjectiveGrad::new(
        w,
        sample.label,
        GradLossKind::L2,
        &target,
        0.0,
        shape,
        fd_step,
    )?;

    let loss_before = obj.gm_loss_at(x_eval)?;
    let mut grad = vec![0.0; x_eval.len()];
    obj.eval(x_eval, &mut grad)?;
    let grad_sq_norm = grad.iter().map(|g| g * g).sum::<f64>();

    // Plain descent, no box projection: the theorem regime is local.
    let x_after: Vec<f64> = x_eval.iter().zip(&grad).map(|(x, g)| x - mu * g).collect();
    let g_after = w.grad_at(&x_after, sample.label)?;
    let loss_after = gm_loss(GradLossKind::L2, &g_after, &target)?;
    let drop_observed = loss_before - loss_after;

    let l_hat = lambda_max.sqrt();
    let m_hat = lambda_min.sqrt();
    let (bound, satisfied) = if lambda_min > 0.0 {
        let bound = grad_sq_norm / (4.0 * lambda_min);
        (bound, Some(drop_observed <= bound * (1.0 + tol)))
    } else {
        (f64::INFINITY, None)
    };

    Ok(BoundCheckRecord {
        mu,
        drop_observed,
        drop_upper_bound_t2: bound,
        grad_sq_norm,
        l_hat,
        m_hat,
        satisfied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smallnet::{init_weights, Activation, NetSpec};

    fn make_cfg(kind: GradLossKind) -> AttackConfig {
        let mut cfg = AttackConfig::new(kind);
        cfg.steps = 40;
        cfg.restarts = 2;
        cfg.alpha_tv = 0.0;
        cfg.seed = 77;
        cfg
    }

    #[test]
    fn adam_fixed_point_on_zero_gradient() {
        let cfg = AttackConfig::new(GradLossKind::L2);
        let mut state = AdamState::new(3);
        let mut x = vec![0.1, 0.5, 0.9];
        let before = x.clone();
        for t in 1..=10 {
            adam_step(&mut state, &mut x, &[0.0, 0.0, 0.0], &cfg, t);
        }
        assert_eq!(x, before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // Hand evaluation at t=1: m_hat = g, v_hat = g^2, so the step is
        // lr * g / (|g| + eps) = lr for g = 1.
        let mut cfg = AttackConfig::new(GradLossKind::L2);
        cfg.lr = 0.1;
        let mut state = AdamState::new(1);
        let mut x = vec![0.5];
        adam_step(&mut state, &mut x, &[1.0], &cfg, 1);
        assert!((x[0] - 0.4).abs() < 1e-8, "{}", x[0]);
    }

    #[test]
    fn adam_clamps_to_pixel_box() {
        let mut cfg = AttackConfig::new(GradLossKind::L2);
        cfg.lr = 0.5;
        let mut state = AdamState::new(1);
        let mut x = vec![0.95];
        adam_step(&mut state, &mut x, &[-1.0], &cfg, 1);
        assert_eq!(x[0], 1.0);
    }

    fn toy_problem() -> (Weights, Sample, ImageShape) {
        let spec = NetSpec::new(vec![4, 6, 3], Activation::Tanh).unwrap();
        let w = init_weights(&spec, &mut SeededRng::new(13, 0));
        let s = Sample::new(vec![0.2, 0.7, 0.4, 0.9], 1).unwrap();
        (w, s, ImageShape::new(2, 2).unwrap())
    }

    #[test]
    fn local_perturb_zero_starts_at_optimum() {
        let (w, s, shape) = toy_problem();
        let t = GradTarget::from_sample(&w, &s).unwrap();
        let mut cfg = make_cfg(GradLossKind::L2);
        cfg.init_mode = InitMode::LocalPerturb { magnitude: 0.0 };
        cfg.steps = 5;
        let res = run_attack(&cfg, &w, &t, &s, shape).unwrap();
        assert!(res.initial_gm_loss < 1e-10);
        assert!(res.final_gm_loss < 1e-10);
        for (a, b) in res.x_rec.iter().zip(&s.pixels) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn chosen_restart_achieves_minimum() {
        let (w, s, shape) = toy_problem();
        let t = GradTarget::from_sample(&w, &s).unwrap();
        let mut cfg = make_cfg(GradLossKind::L2);
        cfg.restarts = 3;
        let res = run_attack(&cfg, &w, &t, &s, shape).unwrap();
        let min = res
            .per_restart_final
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(res.final_gm_loss, min);
        assert_eq!(res.per_restart_final[res.chosen_restart], min);
        assert!(!res.loss_trajectory.is_empty() && res.loss_trajectory.len() <= cfg.steps);
        assert!(res.x_rec.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn attack_deterministic_given_seed() {
        let (w, s, shape) = toy_problem();
        let t = GradTarget::from_sample(&w, &s).unwrap();
        let cfg = make_cfg(GradLossKind::Cosine);
        let a = run_attack(&cfg, &w, &t, &s, shape).unwrap();
        let b = run_attack(&cfg, &w, &t, &s, shape).unwrap();
        assert_eq!(a.x_rec, b.x_rec);
        assert_eq!(a.loss_trajectory, b.loss_trajectory);
        assert_eq!(a.chosen_restart, b.chosen_restart);
    }

    #[test]
    fn windowed_minima_non_increasing() {
        let (w, s, shape) = toy_problem();
        let t = GradTarget::from_sample(&w, &s).unwrap();
        let mut cfg = make_cfg(GradLossKind::L2);
        cfg.steps = 200;
        cfg.restarts = 1;
        cfg.init_mode = InitMode::LocalPerturb { magnitude: 0.1 };
        let res = run_attack(&cfg, &w, &t, &s, shape).unwrap();

        // Adam is not monotone step to step, but 50-step window minima are.
        let windows: Vec<f64> = res
            .loss_trajectory
            .chunks(50)
            .map(|c| c.iter().cloned().fold(f64::INFINITY, f64::min))
            .collect();
        for pair in windows.windows(2) {
            assert!(
                pair[1] <= pair[0] * (1.0 + 1e-9),
                "window minima increased: {pair:?}"
            );
        }
    }

    #[test]
    fn bound_check_zero_at_ground_truth() {
        let (w, s, shape) = toy_problem();
        let rec =
            bound_check_one_step(&w, &s, &s.pixels, shape, 0.01, 4.0, 1.0, 1e-4, 0.1).unwrap();
        assert!(rec.grad_sq_norm < 1e-12);
        assert!(rec.drop_observed.abs() < 1e-12);
        assert_eq!(rec.satisfied, Some(true));
    }

    #[test]
    fn bound_check_quadratic_toy_closed_form() {
        // Softmax-regression net is locally quadratic in the matching
        // loss; with mu << 1/lambda_max the drop must stay under the
        // bound. Closed form on the quadratic model: the drop equals
        // 4 mu sum(l_i^2 e_i^2 (1 - mu l_i)) <= |grad|^2 / (4 l_min).
        let spec = NetSpec::new(vec![4, 3], Activation::Tanh).unwrap();
        let w = init_weights(&spec, &mut SeededRng::new(14, 0));
        let s = Sample::new(vec![0.3, 0.8, 0.2, 0.6], 0).unwrap();
        let shape = ImageShape::new(2, 2).unwrap();

        // Eigenvalues from an explicit Jacobian of the gradient map.
        let h = 1e-5;
        let n = w.len();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for i in 0..4 {
            let mut xp = s.pixels.clone();
            xp[i] += h;
            let mut xm = s.pixels.clone();
            xm[i] -= h;
            let gp = w.grad_at(&xp, s.label).unwrap();
            let gm = w.grad_at(&xm, s.label).unwrap();
            cols.push((0..n).map(|k| (gp[k] - gm[k]) / (2.0 * h)).collect());
        }
        let mut hmat = crate::tensorcore::Matrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += cols[i][k] * cols[j][k];
                }
                hmat.set(i, j, acc);
            }
        }
        // symmetrize away probe noise
        let mut sym = crate::tensorcore::Matrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                sym.set(i, j, 0.5 * (hmat.get(i, j) + hmat.get(j, i)));
            }
        }
        let dec = crate::tensorcore::sym_eigen_dense(&sym).unwrap();
        let (lmax, lmin) = (dec.values[0], dec.values[3].max(0.0));
        assert!(lmin > 0.0, "toy problem should have full-rank curvature");

        let x_eval: Vec<f64> = s
            .pixels
            .iter()
            .enumerate()
            .map(|(i, &p)| p + if i % 2 == 0 { 0.01 } else { -0.01 })
            .collect();
        let mu = 0.1 / lmax;
        let rec =
            bound_check_one_step(&w, &s, &x_eval, shape, mu, lmax, lmin, 1e-4, 0.1).unwrap();
        assert_eq!(rec.satisfied, Some(true));
        assert!(rec.drop_observed > 0.0, "descent should reduce the loss");
        // Theorem-1 lower bound at its own step size.
        let rec1 = bound_check_one_step(
            &w,
            &s,
            &x_eval,
            shape,
            rec.theorem1_step(),
            lmax,
            lmin,
            1e-4,
            0.1,
        )
        .unwrap();
        assert!(rec1.drop_observed >= rec1.theorem1_lower_bound() * (1.0 - 0.1));
    }

    #[test]
    fn bound_check_drop_vanishes_with_mu() {
        let (w, s, shape) = toy_problem();
        let x_eval: Vec<f64> = s.pixels.iter().map(|&p| p + 0.01).collect();
        let mut drops = Vec::new();
        for mu in [1e-3, 1e-4, 1e-5] {
            let rec =
                bound_check_one_step(&w, &s, &x_eval, shape, mu, 4.0, 1.0, 1e-4, 0.1).unwrap();
            drops.push(rec.drop_observed);
        }
        assert!(drops[0] > drops[1] && drops[1] > drops[2]);
        assert!(drops[2] > 0.0);
    }

    #[test]
    fn bound_check_lambda_min_zero_not_applicable() {
        let (w, s, shape) = toy_problem();
        let rec =
            bound_check_one_step(&w, &s, &s.pixels, shape, 0.01, 4.0, 0.0, 1e-4, 0.1).unwrap();
        assert_eq!(rec.satisfied, None);
        assert!(rec.drop_upper_bound_t2.is_infinite());
        assert_eq!(rec.m_hat, 0.0);
    }
}
