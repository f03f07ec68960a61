//! Small smooth feedforward classifier.
//!
//! The network is deliberately tiny and twice differentiable: its
//! weight-gradient map `x -> dL/dw` is the object every downstream module
//! probes with finite differences, so activations with kinks are not
//! offered. Weights live in one flat vector with a fixed documented
//! layout, which keeps gradient vectors comparable everywhere.
//!
//! Flat layout, in order, for each layer `l` mapping `in -> out`:
//! the `out x in` weight matrix row-major, then the `out` biases.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::SeededRng;

/// Smooth activation for hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            // max(x,0) + ln(1+e^-|x|) avoids overflow for large |x|.
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Softplus => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// Architecture of the classifier: layer sizes from input to classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

/// Offsets of one layer inside the flat weight vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerLayout {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w_offset: usize,
    pub b_offset: usize,
}

impl NetSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(
                "network needs at least input and output layers".into(),
            ));
        }
        if layer_sizes[0] < 1 {
            return Err(Error::Config("input size must be >= 1".into()));
        }
        if *layer_sizes.last().unwrap() < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        Ok(Self {
            layer_sizes,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Total number of scalar weights: sum of `(in + 1) * out` per layer.
    pub fn weight_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    pub(crate) fn layout(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let l = LayerLayout {
                    in_dim,
                    out_dim,
                    w_offset: offset,
                    b_offset: offset + in_dim * out_dim,
                };
                offset += (in_dim + 1) * out_dim;
                l
            })
            .collect()
    }
}

/// One labeled image: pixels in `[0,1]` flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pixels: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(pixels: Vec<f64>, label: usize) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::Data("sample has no pixels".into()));
        }
        if pixels.iter().any(|p| !p.is_finite() || !(0.0..=1.0).contains(p)) {
            return Err(Error::Data("pixel values must be finite and in [0,1]".into()));
        }
        Ok(Self { pixels, label })
    }
}

/// Trained (or freshly initialized) network weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    spec: NetSpec,
    flat: Vec<f64>,
}

/// Reusable forward/backward buffers for the per-sample hot path.
pub struct Scratch {
    layout: Vec<LayerLayout>,
    activation: Activation,
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    /// Post-activation outputs per layer; the last entry holds raw logits.
    act: Vec<Vec<f64>>,
    probs: Vec<f64>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Scratch {
    pub fn new(spec: &NetSpec) -> Self {
        let layout = spec.layout();
        let widest = spec.layer_sizes().iter().copied().max().unwrap();
        Self {
            pre: layout.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            act: layout.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            probs: vec![0.0; spec.class_count()],
            delta: vec![0.0; widest],
            delta_next: vec![0.0; widest],
            activation: spec.activation(),
            layout,
        }
    }

    pub fn logits(&self) -> &[f64] {
        self.act.last().unwrap()
    }
}

impl Weights {
    pub fn new(spec: NetSpec, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != spec.weight_count() {
            return Err(Error::Dimension {
                context: "Weights::new",
                expected: spec.weight_count(),
                actual: flat.len(),
            });
        }
        if flat.iter().any(|w| !w.is_finite()) {
            return Err(Error::Data("weights must be finite".into()));
        }
        Ok(Self { spec, flat })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Logits for input `x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut scratch = Scratch::new(&self.spec);
        self.forward_into(x, &mut scratch);
        Ok(scratch.logits().to_vec())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim() {
            return Err(Error::Dimension {
                context: "forward",
                expected: self.spec.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass into preallocated buffers. Panics on shape misuse;
    /// shape-checked entry points live on the public methods.
    pub(crate) fn forward_into(&self, x: &[f64], s: &mut Scratch) {
        let last = s.layout.len() - 1;
        for (l, layer) in s.layout.iter().enumerate() {
            let (done, rest) = s.act.split_at_mut(l);
            let input: &[f64] = if l == 0 { x } else { &done[l - 1] };
            let act = &mut rest[0];
            let pre = &mut s.pre[l];
            for i in 0..layer.out_dim {
                let row = &self.flat[layer.w_offset + i * layer.in_dim
                    ..layer.w_offset + (i + 1) * layer.in_dim];
                let mut acc = self.flat[layer.b_offset + i];
                for (w, v) in row.iter().zip(input) {
                    acc += w * v;
                }
                pre[i] = acc;
                act[i] = if l == last { acc } else { s.activation.apply(acc) };
            }
        }
    }

    /// Weight gradient of the cross-entropy loss at an arbitrary input.
    ///
    /// `x` is not required to lie in the pixel box; finite-difference
    /// probes evaluate this slightly outside `[0,1]`.
    pub fn grad_at(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if label >= self.spec.class_count() {
            return Err(Error::Contract(format!(
                "label {label} out of range for {} classes",
                self.spec.class_count()
            )));
        }
        let mut scratch = Scratch::new(&self.spec);
        let mut out = vec![0.0; self.len()];
        self.grad_into(x, label, &mut out, &mut scratch);
        Ok(out)
    }

    /// Analytic backpropagation into a preallocated gradient buffer.
    pub(crate) fn grad_into(&self, x: &[f64], label: usize, out: &mut [f64], s: &mut Scratch) {
        self.forward_into(x, s);

        // Softmax probabilities from the logits, stabilized by the max.
        let logits = s.act.last().unwrap();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (p, &l) in s.probs.iter_mut().zip(logits) {
            *p = (l - m).exp();
            z += *p;
        }
        let c = logits.len();
        for i in 0..c {
            s.probs[i] /= z;
        }

        // delta at the output layer: softmax - onehot.
        s.delta[..c].copy_from_slice(&s.probs);
        s.delta[label] -= 1.0;

        for l in (0..s.layout.len()).rev() {
            let layer = s.layout[l];
            let input: &[f64] = if l == 0 { x } else { &s.act[l - 1] };

            for i in 0..layer.out_dim {
                let d = s.delta[i];
                let row =
                    &mut out[layer.w_offset + i * layer.in_dim..layer.w_offset + (i + 1) * layer.in_dim];
                for (g, v) in row.iter_mut().zip(input) {
                    *g = d * v;
                }
                out[layer.b_offset + i] = d;
            }

            if l > 0 {
                let prev = s.layout[l - 1];
                for j in 0..layer.in_dim {
                    let mut acc = 0.0;
                    for i in 0..layer.out_dim {
                        acc += self.flat[layer.w_offset + i * layer.in_dim + j] * s.delta[i];
                    }
                    s.delta_next[j] = acc * s.activation.derivative(s.pre[l - 1][j]);
                }
                let _ = prev;
                std::mem::swap(&mut s.delta, &mut s.delta_next);
            }
        }
    }

    /// Writes the JSON header to `path` and the raw little-endian `f64`
    /// weights to a sidecar `.bin` file next to it.
    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        let bin_path = sidecar_path(path);
        let header = WeightsHeader {
            layout_version: LAYOUT_VERSION,
            layer_sizes: self.spec.layer_sizes.clone(),
            activation: self.spec.activation.name().to_string(),
            seed,
            weight_count: self.len(),
            data_file: bin_path
                .file_name()
                .unwrap()
                .to_string_lossy()
                .into_owned(),
        };
        let json = serde_json::to_string_pretty(&header)
            .map_err(|e| Error::Data(format!("header encode: {e}")))?;
        std::fs::write(path, json)?;

        let mut bytes = Vec::with_capacity(self.len() * 8);
        for w in &self.flat {
            bytes.write_all(&w.to_le_bytes())?;
        }
        std::fs::write(&bin_path, bytes)?;
        Ok(())
    }

    /// Loads weights saved by [`Weights::save`]; returns the stored seed too.
    pub fn load(path: &Path) -> Result<(Self, u64)> {
        let json = std::fs::read_to_string(path)?;
        let header: WeightsHeader =
            serde_json::from_str(&json).map_err(|e| Error::Data(format!("bad weights header: {e}")))?;
        if header.layout_version != LAYOUT_VERSION {
            return Err(Error::Data(format!(
                "unsupported weights layout version {}",
                header.layout_version
            )));
        }
        let spec = NetSpec::new(header.layer_sizes, Activation::parse(&header.activation)?)?;
        if header.weight_count != spec.weight_count() {
            return Err(Error::Data(format!(
                "header weight_count {} does not match layer sizes ({} expected)",
                header.weight_count,
                spec.weight_count()
            )));
        }

        let bin_path = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&header.data_file);
        let mut bytes = Vec::new();
        std::fs::File::open(&bin_path)?.read_to_end(&mut bytes)?;
        if bytes.len() != header.weight_count * 8 {
            return Err(Error::Data(format!(
                "weight data file {}: expected {} bytes, found {}",
                bin_path.display(),
                header.weight_count * 8,
                bytes.len()
            )));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let w = Weights::new(spec, flat)?;
        Ok((w, header.seed))
    }
}

const LAYOUT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WeightsHeader {
    layout_version: u32,
    layer_sizes: Vec<usize>,
    activation: String,
    seed: u64,
    weight_count: usize,
    data_file: String,
}

fn sidecar_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Glorot-uniform weight matrices, zero biases.
pub fn init_weights(spec: &NetSpec, rng: &mut SeededRng) -> Weights {
    let mut flat = vec![0.0; spec.weight_count()];
    for layer in spec.layout() {
        let bound = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
        for k in 0..layer.in_dim * layer.out_dim {
            flat[layer.w_offset + k] = rng.uniform(-bound, bound);
        }
        // biases stay zero
    }
    Weights {
        spec: spec.clone(),
        flat,
    }
}

/// Softmax cross-entropy `-log softmax(logits)[label]`.
pub fn loss_ce(logits: &[f64], label: usize) -> f64 {
    assert!(label < logits.len(), "label out of range");
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    lse - (logits[label] - m)
}

/// Analytic weight gradient of `loss_ce(forward(x), y)` for one sample.
pub fn grad_weights(w: &Weights, s: &Sample) -> Result<Vec<f64>> {
    w.grad_at(&s.pixels, s.label)
}

/// Plain per-sample SGD with seeded per-epoch shuffling.
///
/// `epochs = 0` returns the initialization untouched.
pub fn train_sgd(
    spec: &NetSpec,
    data: &[Sample],
    epochs: usize,
    lr: f64,
    rng: &mut SeededRng,
) -> Result<Weights> {
    if data.is_empty() {
        return Err(Error::Contract("train_sgd needs a nonempty dataset".into()));
    }
    for s in data {
        if s.pixels.len() != spec.input_dim() {
            return Err(Error::Dimension {
                context: "train_sgd",
                expected: spec.input_dim(),
                actual: s.pixels.len(),
            });
        }
        if s.label >= spec.class_count() {
            return Err(Error::Contract(format!(
                "label {} out of range for {} classes",
                s.label,
                spec.class_count()
            )));
        }
    }

    let mut w = init_weights(spec, rng);
    let mut scratch = Scratch::new(spec);
    let mut grad = vec![0.0; w.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();

    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            let s = &data[i];
            w.grad_into(&s.pixels, s.label, &mut grad, &mut scratch);
            for (wk, gk) in w.flat.iter_mut().zip(&grad) {
                *wk -= lr * gk;
            }
        }
    }
    Ok(w)
}

/// Mean cross-entropy of `w` over `data`.
pub fn mean_loss(w: &Weights, data: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in data {
        total += loss_ce(&w.forward(&s.pixels)?, s.label);
    }
    Ok(total / data.len() as f64)
}

/// Fraction of `data` classified correctly by argmax logits.
pub fn accuracy(w: &Weights, data: &[Sample]) -> Result<f64> {
    let mut hits = 0usize;
    for s in data {
        let logits = w.forward(&s.pixels)?;
        let argmax = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if argmax == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
