//! Python bindings for the gradient inversion laboratory.
//!
//! Exposes the classifier, the attack, the Hessian-spectrum proxies, the
//! similarity metrics, and the full experiment pipeline. Images cross the
//! boundary as flat `list[float]` plus `(height, width)`; samples as
//! `(pixels, label)` tuples.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gradlab::attack;
use gradlab::error::Error;
use gradlab::gradmatch;
use gradlab::harness;
use gradlab::lavp;
use gradlab::metrics;
use gradlab::smallnet;
use gradlab::tensorcore::SeededRng;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        Error::AttackFailed(_) | Error::UndefinedCorrelation(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_kind(kind: &str) -> PyResult<gradmatch::GradLossKind> {
    gradmatch::GradLossKind::parse(kind).map_err(to_py)
}

fn shape(height: usize, width: usize) -> PyResult<gradmatch::ImageShape> {
    gradmatch::ImageShape::new(height, width).map_err(to_py)
}

fn sample(pixels: Vec<f64>, label: usize) -> PyResult<smallnet::Sample> {
    smallnet::Sample::new(pixels, label).map_err(to_py)
}

/// Network architecture: layer sizes and a smooth activation.
#[pyclass(name = "NetSpec", module = "gradlab_py", skip_from_py_object)]
#[derive(Clone)]
struct PyNetSpec {
    inner: smallnet::NetSpec,
}

#[pymethods]
impl PyNetSpec {
    #[new]
    #[pyo3(signature = (layers, activation = "tanh"))]
    fn new(layers: Vec<usize>, activation: &str) -> PyResult<Self> {
        let act = smallnet::Activation::parse(activation).map_err(to_py)?;
        Ok(Self {
            inner: smallnet::NetSpec::new(layers, act).map_err(to_py)?,
        })
    }

    #[getter]
    fn layers(&self) -> Vec<usize> {
        self.inner.layer_sizes().to_vec()
    }

    #[getter]
    fn activation(&self) -> &'static str {
        self.inner.activation().name()
    }

    fn weight_count(&self) -> usize {
        self.inner.weight_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "NetSpec(layers={:?}, activation='{}')",
            self.inner.layer_sizes(),
            self.inner.activation().name()
        )
    }
}

/// Trained classifier weights.
#[pyclass(name = "Weights", module = "gradlab_py", skip_from_py_object)]
#[derive(Clone)]
struct PyWeights {
    inner: smallnet::Weights,
}

#[pymethods]
impl PyWeights {
    /// Logits for one input.
    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&x).map_err(to_py)
    }

    /// Weight gradient of the cross-entropy loss at `(x, label)`.
    fn grad(&self, x: Vec<f64>, label: usize) -> PyResult<Vec<f64>> {
        self.inner.grad_at(&x, label).map_err(to_py)
    }

    #[getter]
    fn spec(&self) -> PyNetSpec {
        PyNetSpec {
            inner: self.inner.spec().clone(),
        }
    }

    fn flat(&self) -> Vec<f64> {
        self.inner.flat().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Writes the JSON header to `path` and raw weights to the `.bin`
    /// sidecar.
    fn save(&self, path: PathBuf, seed: u64) -> PyResult<()> {
        self.inner.save(&path, seed).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<(Self, u64)> {
        let (w, seed) = smallnet::Weights::load(&path).map_err(to_py)?;
        Ok((Self { inner: w }, seed))
    }
}

/// Client-side ground-truth gradient.
#[pyclass(name = "GradTarget", module = "gradlab_py")]
struct PyGradTarget {
    inner: gradmatch::GradTarget,
}

#[pymethods]
impl PyGradTarget {
    #[getter]
    fn norm(&self) -> f64 {
        self.inner.norm()
    }

    fn g_star(&self) -> Vec<f64> {
        self.inner.g_star().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Attack hyperparameters.
#[pyclass(name = "AttackConfig", module = "gradlab_py", skip_from_py_object)]
#[derive(Clone)]
struct PyAttackConfig {
    inner: attack::AttackConfig,
}

#[pymethods]
impl PyAttackConfig {
    #[new]
    #[pyo3(signature = (
        kind = "l2", steps = 500, lr = 0.05, beta1 = 0.9, beta2 = 0.999,
        adam_eps = 1e-8, alpha_tv = 1e-2, restarts = 3, init = "random",
        fd_step = 1e-4, seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: &str,
        steps: usize,
        lr: f64,
        beta1: f64,
        beta2: f64,
        adam_eps: f64,
        alpha_tv: f64,
        restarts: usize,
        init: &str,
        fd_step: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let mut cfg = attack::AttackConfig::new(parse_kind(kind)?);
        cfg.steps = steps;
        cfg.lr = lr;
        cfg.beta1 = beta1;
        cfg.beta2 = beta2;
        cfg.adam_eps = adam_eps;
        cfg.alpha_tv = alpha_tv;
        cfg.restarts = restarts;
        cfg.init_mode = if init == "random" {
            attack::InitMode::RandomUniform
        } else if let Some(mag) = init.strip_prefix("local:") {
            attack::InitMode::LocalPerturb {
                magnitude: mag
                    .parse()
                    .map_err(|_| PyValueError::new_err(format!("bad init '{init}'")))?,
            }
        } else {
            return Err(PyValueError::new_err(format!(
                "init must be 'random' or 'local:<magnitude>', got '{init}'"
            )));
        };
        cfg.fd_step = fd_step;
        cfg.seed = seed;
        cfg.validate().map_err(to_py)?;
        Ok(Self { inner: cfg })
    }

    fn __repr__(&self) -> String {
        format!(
            "AttackConfig(kind='{}', steps={}, restarts={}, seed={})",
            self.inner.kind.tag(),
            self.inner.steps,
            self.inner.restarts,
            self.inner.seed
        )
    }
}

/// Reconstruction outcome.
#[pyclass(name = "AttackResult", module = "gradlab_py")]
struct PyAttackResult {
    inner: attack::AttackResult,
}

#[pymethods]
impl PyAttackResult {
    #[getter]
    fn x_rec(&self) -> Vec<f64> {
        self.inner.x_rec.clone()
    }

    #[getter]
    fn initial_gm_loss(&self) -> f64 {
        self.inner.initial_gm_loss
    }

    #[getter]
    fn final_gm_loss(&self) -> f64 {
        self.inner.final_gm_loss
    }

    #[getter]
    fn loss_trajectory(&self) -> Vec<f64> {
        self.inner.loss_trajectory.clone()
    }

    #[getter]
    fn per_restart_final(&self) -> Vec<f64> {
        self.inner.per_restart_final.clone()
    }

    #[getter]
    fn chosen_restart(&self) -> usize {
        self.inner.chosen_restart
    }

    #[getter]
    fn wall_time_s(&self) -> f64 {
        self.inner.wall_time_s
    }
}

/// Per-sample proxy values.
#[pyclass(name = "ProxyRecord", module = "gradlab_py")]
struct PyProxyRecord {
    inner: lavp::ProxyRecord,
}

#[pymethods]
impl PyProxyRecord {
    #[getter]
    fn sample_id(&self) -> usize {
        self.inner.sample_id
    }

    #[getter]
    fn grad_norm(&self) -> f64 {
        self.inner.grad_norm
    }

    #[getter]
    fn l2_max(&self) -> f64 {
        self.inner.l2_max
    }

    #[getter]
    fn l2_min(&self) -> f64 {
        self.inner.l2_min
    }

    #[getter]
    fn cos_max(&self) -> f64 {
        self.inner.cos_max
    }

    #[getter]
    fn cos_min(&self) -> f64 {
        self.inner.cos_min
    }

    #[getter]
    fn fusion(&self) -> f64 {
        self.inner.fusion
    }

    fn as_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("sample_id", self.inner.sample_id)?;
        d.set_item("grad_norm", self.inner.grad_norm)?;
        d.set_item("l2_max", self.inner.l2_max)?;
        d.set_item("l2_min", self.inner.l2_min)?;
        d.set_item("cos_max", self.inner.cos_max)?;
        d.set_item("cos_min", self.inner.cos_min)?;
        d.set_item("fusion", self.inner.fusion)?;
        Ok(d)
    }
}

/// Glorot-initialized weights for `spec`.
#[pyfunction]
fn init_weights(spec: &PyNetSpec, seed: u64) -> PyWeights {
    let mut rng = SeededRng::new(seed, 0);
    PyWeights {
        inner: smallnet::init_weights(&spec.inner, &mut rng),
    }
}

/// Plain SGD training over `(pixels, label)` tuples.
#[pyfunction]
fn train_sgd(
    spec: &PyNetSpec,
    data: Vec<(Vec<f64>, usize)>,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> PyResult<PyWeights> {
    let samples: Vec<smallnet::Sample> = data
        .into_iter()
        .map(|(px, y)| sample(px, y))
        .collect::<PyResult<_>>()?;
    let mut rng = SeededRng::new(seed, 0);
    Ok(PyWeights {
        inner: smallnet::train_sgd(&spec.inner, &samples, epochs, lr, &mut rng).map_err(to_py)?,
    })
}

/// The client's gradient for `(x, label)` wrapped as an attack target.
#[pyfunction]
fn grad_target(weights: &PyWeights, x: Vec<f64>, label: usize) -> PyResult<PyGradTarget> {
    let s = sample(x, label)?;
    Ok(PyGradTarget {
        inner: gradmatch::GradTarget::from_sample(&weights.inner, &s).map_err(to_py)?,
    })
}

/// Gradient-matching loss between a candidate gradient and the target.
#[pyfunction]
fn gm_loss(kind: &str, g: Vec<f64>, target: &PyGradTarget) -> PyResult<f64> {
    gradmatch::gm_loss(parse_kind(kind)?, &g, &target.inner).map_err(to_py)
}

/// Smoothed anisotropic total variation of a flat image.
#[pyfunction]
#[pyo3(signature = (x, height, width, eps = 1e-6))]
fn tv_loss(x: Vec<f64>, height: usize, width: usize, eps: f64) -> PyResult<f64> {
    gradmatch::tv_loss(&x, shape(height, width)?, eps).map_err(to_py)
}

/// Multi-restart gradient inversion of one sample.
#[pyfunction]
fn run_attack(
    cfg: &PyAttackConfig,
    weights: &PyWeights,
    target: &PyGradTarget,
    x_star: Vec<f64>,
    label: usize,
    height: usize,
    width: usize,
) -> PyResult<PyAttackResult> {
    let s = sample(x_star, label)?;
    Ok(PyAttackResult {
        inner: attack::run_attack(
            &cfg.inner,
            &weights.inner,
            &target.inner,
            &s,
            shape(height, width)?,
        )
        .map_err(to_py)?,
    })
}

/// Every vulnerability proxy for one sample.
#[pyfunction]
#[pyo3(signature = (weights, x, label, sample_id = 0, seed = 0, max_iters = 500, tol = 1e-9, fd_step = 1e-4))]
#[allow(clippy::too_many_arguments)]
fn compute_proxies(
    weights: &PyWeights,
    x: Vec<f64>,
    label: usize,
    sample_id: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
    fd_step: f64,
) -> PyResult<PyProxyRecord> {
    let s = sample(x, label)?;
    let params = lavp::ProxyParams {
        power: lavp::PowerIterParams { max_iters, tol },
        fd_step,
    };
    Ok(PyProxyRecord {
        inner: lavp::compute_proxies(&weights.inner, &s, sample_id, params, seed).map_err(to_py)?,
    })
}

/// Dense gradient-matching Hessian at the ground truth, row-major, for
/// external cross-checks.
#[pyfunction]
#[pyo3(signature = (weights, x, label, kind = "l2", fd_step = 1e-4))]
fn dense_hessian(
    weights: &PyWeights,
    x: Vec<f64>,
    label: usize,
    kind: &str,
    fd_step: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let s = sample(x, label)?;
    let target = gradmatch::GradTarget::from_sample(&weights.inner, &s).map_err(to_py)?;
    let map = lavp::WeightGradientMap::new(&weights.inner, s.label);
    let op = lavp::HvpOperator::new(parse_kind(kind)?, &map, &s.pixels, &target, fd_step)
        .map_err(to_py)?;
    let dense = lavp::dense_hessian_oracle(&op).map_err(to_py)?;
    let d = dense.matrix.rows();
    Ok((0..d).map(|r| dense.matrix.row(r).to_vec()).collect())
}

/// Loss-agnostic fusion proxy.
#[pyfunction]
fn fusion_geomean(l2_max: f64, cos_min: f64) -> f64 {
    lavp::fusion_geomean(l2_max, cos_min)
}

/// Mean squared error.
#[pyfunction]
fn mse(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::mse(&a, &b).map_err(to_py)
}

/// Peak signal-to-noise ratio in dB (unit range, capped at 100).
#[pyfunction]
fn psnr(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::psnr(&a, &b).map_err(to_py)
}

/// Structural similarity.
#[pyfunction]
fn ssim(a: Vec<f64>, b: Vec<f64>, height: usize, width: usize) -> PyResult<f64> {
    metrics::ssim(&a, &b, shape(height, width)?).map_err(to_py)
}

/// Spearman rank correlation with average-rank tie handling.
#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::spearman(&a, &b).map_err(to_py)
}

/// Deterministic synthetic blob dataset as `(pixels, label)` tuples.
#[pyfunction]
#[pyo3(signature = (height, width, classes, count, seed, blob_sigma = 1.6, noise = 0.15))]
fn gen_synthetic(
    height: usize,
    width: usize,
    classes: usize,
    count: usize,
    seed: u64,
    blob_sigma: f64,
    noise: f64,
) -> PyResult<Vec<(Vec<f64>, usize)>> {
    let mut rng = SeededRng::new(seed, 0);
    let samples =
        harness::synthetic::gen_synthetic(shape(height, width)?, classes, blob_sigma, noise, count, &mut rng);
    Ok(samples.into_iter().map(|s| (s.pixels, s.label)).collect())
}

/// Full experiment pipeline; writes every artifact and returns a summary.
#[pyfunction]
#[pyo3(signature = (config_path = None, seed = None, out = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = match config_path {
        Some(p) => harness::ExperimentConfig::from_file(&p).map_err(to_py)?,
        None => harness::ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    let (rows, report) = harness::run_experiment(&cfg).map_err(to_py)?;

    let d = PyDict::new(py);
    d.set_item("sample_count", report.sample_count)?;
    d.set_item("excluded", report.excluded)?;
    d.set_item("config_digest", report.config_digest.clone())?;
    d.set_item("output_dir", cfg.output_dir.display().to_string())?;
    d.set_item("rows", rows.len())?;
    for k in &report.kinds {
        for (pi, proxy) in harness::report::PROXY_NAMES.iter().enumerate() {
            for (si, score) in harness::report::SCORE_NAMES.iter().enumerate() {
                d.set_item(
                    format!("spearman_{}_{}_{}", k.kind.tag(), proxy, score),
                    k.coefficients[pi][si],
                )?;
            }
        }
    }
    Ok(d)
}

#[pymodule]
fn gradlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetSpec>()?;
    m.add_class::<PyWeights>()?;
    m.add_class::<PyGradTarget>()?;
    m.add_class::<PyAttackConfig>()?;
    m.add_class::<PyAttackResult>()?;
    m.add_class::<PyProxyRecord>()?;
    m.add_function(wrap_pyfunction!(init_weights, m)?)?;
    m.add_function(wrap_pyfunction!(train_sgd, m)?)?;
    m.add_function(wrap_pyfunction!(grad_target, m)?)?;
    m.add_function(wrap_pyfunction!(gm_loss, m)?)?;
    m.add_function(wrap_pyfunction!(tv_loss, m)?)?;
    m.add_function(wrap_pyfunction!(run_attack, m)?)?;
    m.add_function(wrap_pyfunction!(compute_proxies, m)?)?;
    m.add_function(wrap_pyfunction!(dense_hessian, m)?)?;
    m.add_function(wrap_pyfunction!(fusion_geomean, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
