//! Experiment configuration and its flat `key = value` file format.
//!
//! Keys use dotted section prefixes (`attack.l2.steps = 500`); `#` starts
//! a comment. Unknown keys are errors so typos surface immediately. The
//! canonical rendering of a config doubles as its digest input, making
//! "same digest" mean "same experiment".

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::attack::{AttackConfig, InitMode};
use crate::error::{Error, Result};
use crate::gradmatch::{GradLossKind, ImageShape};
use crate::lavp::ProxyParams;
use crate::smallnet::{Activation, NetSpec};

/// Classifier architecture and training schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub train_epochs: usize,
    pub train_lr: f64,
    /// When set, load these weights instead of training.
    pub load: Option<PathBuf>,
}

/// Synthetic blob dataset controls.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub classes: usize,
    pub blob_sigma: f64,
    pub noise: f64,
    /// Extra samples generated to train the classifier.
    pub train_count: usize,
}

/// Where evaluation samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic(SyntheticParams),
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Optional center-crop (square side) applied before downsampling.
        crop: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    pub sample_count: usize,
}

/// Full experiment description; the pipeline is a pure function of this.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads for per-sample parallelism; 0 = one per core.
    pub workers: usize,
    pub model: ModelConfig,
    pub image_height: usize,
    pub image_width: usize,
    pub dataset: DatasetConfig,
    /// Which attack losses to run, in execution order.
    pub kinds: Vec<GradLossKind>,
    pub attack_l2: AttackConfig,
    pub attack_cos: AttackConfig,
    pub proxy: ProxyParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 42,
            output_dir: PathBuf::from("gradlab-out"),
            workers: 0,
            model: ModelConfig {
                layers: vec![64, 32, 4],
                activation: Activation::Tanh,
                train_epochs: 40,
                train_lr: 0.1,
                load: None,
            },
            image_height: 8,
            image_width: 8,
            dataset: DatasetConfig {
                source: DatasetSource::Synthetic(SyntheticParams {
                    classes: 4,
                    blob_sigma: 1.6,
                    noise: 0.15,
                    train_count: 240,
                }),
                sample_count: 20,
            },
            kinds: vec![GradLossKind::L2, GradLossKind::Cosine],
            attack_l2: AttackConfig::new(GradLossKind::L2),
            attack_cos: AttackConfig::new(GradLossKind::Cosine),
            proxy: ProxyParams::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file and validates the result.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_checked(&text)
    }

    /// Parses config text on top of the defaults.
    pub fn from_str_checked(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            cfg.apply(key.trim(), value.trim()).map_err(|e| {
                let msg = match e {
                    Error::Config(m) => m,
                    other => other.to_string(),
                };
                Error::Config(format!("line {}: {msg}", lineno + 1))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "master_seed" => self.master_seed = parse_u64(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "workers" => self.workers = parse_usize(key, value)?,
            "model.layers" => self.model.layers = parse_usize_list(key, value)?,
            "model.activation" => self.model.activation = Activation::parse(value)?,
            "model.train.epochs" => self.model.train_epochs = parse_usize(key, value)?,
            "model.train.lr" => self.model.train_lr = parse_f64(key, value)?,
            "model.load" => {
                self.model.load = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "image.height" => self.image_height = parse_usize(key, value)?,
            "image.width" => self.image_width = parse_usize(key, value)?,
            "dataset.source" => match value {
                "synthetic" => {
                    if !matches!(self.dataset.source, DatasetSource::Synthetic(_)) {
                        self.dataset.source = DatasetSource::Synthetic(SyntheticParams {
                            classes: 4,
                            blob_sigma: 1.6,
                            noise: 0.15,
                            train_count: 240,
                        });
                    }
                }
                "idx" => {
                    if !matches!(self.dataset.source, DatasetSource::Idx { .. }) {
                        self.dataset.source = DatasetSource::Idx {
                            images: PathBuf::new(),
                            labels: PathBuf::new(),
                            crop: None,
                        };
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "dataset.source must be 'synthetic' or 'idx', got '{other}'"
                    )))
                }
            },
            "dataset.sample_count" => self.dataset.sample_count = parse_usize(key, value)?,
            "dataset.synthetic.classes" => self.synthetic_mut()?.classes = parse_usize(key, value)?,
            "dataset.synthetic.blob_sigma" => {
                self.synthetic_mut()?.blob_sigma = parse_f64(key, value)?
            }
            "dataset.synthetic.noise" => self.synthetic_mut()?.noise = parse_f64(key, value)?,
            "dataset.synthetic.train_count" => {
                self.synthetic_mut()?.train_count = parse_usize(key, value)?
            }
            "dataset.idx.images" => *self.idx_mut()?.0 = PathBuf::from(value),
            "dataset.idx.labels" => *self.idx_mut()?.1 = PathBuf::from(value),
            "dataset.idx.crop" => {
                *self.idx_mut()?.2 = if value.is_empty() {
                    None
                } else {
                    Some(parse_usize(key, value)?)
                }
            }
            "attack.kinds" => {
                let mut kinds = Vec::new();
                for part in value.split(',') {
                    let k = GradLossKind::parse(part.trim())?;
                    if kinds.contains(&k) {
                        return Err(Error::Config(format!("duplicate attack kind '{part}'")));
                    }
                    kinds.push(k);
                }
                if kinds.is_empty() {
                    return Err(Error::Config("attack.kinds must not be empty".into()));
                }
                self.kinds = kinds;
            }
            "proxy.max_iters" => self.proxy.power.max_iters = parse_usize(key, value)?,
            "proxy.tol" => self.proxy.power.tol = parse_f64(key, value)?,
            "proxy.fd_step" => self.proxy.fd_step = parse_f64(key, value)?,
            _ => {
                if let Some(rest) = key.strip_prefix("attack.l2.") {
                    apply_attack_key(&mut self.attack_l2, rest, key, value)?;
                } else if let Some(rest) = key.strip_prefix("attack.cos.") {
                    apply_attack_key(&mut self.attack_cos, rest, key, value)?;
                } else {
                    return Err(Error::Config(format!("unknown key '{key}'")));
                }
            }
        }
        Ok(())
    }

    fn synthetic_mut(&mut self) -> Result<&mut SyntheticParams> {
        match &mut self.dataset.source {
            DatasetSource::Synthetic(p) => Ok(p),
            DatasetSource::Idx { .. } => Err(Error::Config(
                "dataset.synthetic.* requires dataset.source = synthetic (set it first)".into(),
            )),
        }
    }

    fn idx_mut(&mut self) -> Result<(&mut PathBuf, &mut PathBuf, &mut Option<usize>)> {
        match &mut self.dataset.source {
            DatasetSource::Idx {
                images,
                labels,
                crop,
            } => Ok((images, labels, crop)),
            DatasetSource::Synthetic(_) => Err(Error::Config(
                "dataset.idx.* requires dataset.source = idx (set it first)".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.image_shape()?;
        if self.model.layers.len() < 2 {
            return Err(Error::Config("model.layers needs at least two entries".into()));
        }
        if shape.len() != self.model.layers[0] {
            return Err(Error::Config(format!(
                "image {}x{} = {} pixels does not match model input {}",
                self.image_height,
                self.image_width,
                shape.len(),
                self.model.layers[0]
            )));
        }
        let spec = self.net_spec()?;
        if self.dataset.sample_count < 2 {
            return Err(Error::Config(
                "dataset.sample_count must be >= 2 (rank correlation needs pairs)".into(),
            ));
        }
        match &self.dataset.source {
            DatasetSource::Synthetic(p) => {
                if p.classes == 0 || p.classes > spec.class_count() {
                    return Err(Error::Config(format!(
                        "dataset.synthetic.classes = {} out of range for a {}-class model",
                        p.classes,
                        spec.class_count()
                    )));
                }
                if p.blob_sigma <= 0.0 {
                    return Err(Error::Config("dataset.synthetic.blob_sigma must be positive".into()));
                }
                if p.noise < 0.0 {
                    return Err(Error::Config("dataset.synthetic.noise must be >= 0".into()));
                }
            }
            DatasetSource::Idx { images, labels, .. } => {
                if images.as_os_str().is_empty() || labels.as_os_str().is_empty() {
                    return Err(Error::Config(
                        "dataset.idx.images and dataset.idx.labels are required for idx source".into(),
                    ));
                }
            }
        }
        self.attack_l2.validate()?;
        self.attack_cos.validate()?;
        if self.proxy.power.max_iters < 1 {
            return Err(Error::Config("proxy.max_iters must be >= 1".into()));
        }
        if self.proxy.power.tol <= 0.0 || self.proxy.fd_step <= 0.0 {
            return Err(Error::Config("proxy.tol and proxy.fd_step must be positive".into()));
        }
        if self.model.train_lr <= 0.0 {
            return Err(Error::Config("model.train.lr must be positive".into()));
        }
        Ok(())
    }

    pub fn image_shape(&self) -> Result<ImageShape> {
        ImageShape::new(self.image_height, self.image_width)
    }

    pub fn net_spec(&self) -> Result<NetSpec> {
        NetSpec::new(self.model.layers.clone(), self.model.activation)
    }

    pub fn attack_for(&self, kind: GradLossKind) -> &AttackConfig {
        match kind {
            GradLossKind::L2 => &self.attack_l2,
            GradLossKind::Cosine => &self.attack_cos,
        }
    }

    /// Canonical `key = value` rendering: fixed key order, every value
    /// explicit. Parsing it back yields an equal config.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("master_seed", self.master_seed.to_string());
        push("output_dir", self.output_dir.display().to_string());
        push("workers", self.workers.to_string());
        push(
            "model.layers",
            self.model
                .layers
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        push("model.activation", self.model.activation.name().to_string());
        push("model.train.epochs", self.model.train_epochs.to_string());
        push("model.train.lr", format_f64(self.model.train_lr));
        push(
            "model.load",
            self.model
                .load
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        push("image.height", self.image_height.to_string());
        push("image.width", self.image_width.to_string());
        match &self.dataset.source {
            DatasetSource::Synthetic(p) => {
                push("dataset.source", "synthetic".into());
                push("dataset.sample_count", self.dataset.sample_count.to_string());
                push("dataset.synthetic.classes", p.classes.to_string());
                push("dataset.synthetic.blob_sigma", format_f64(p.blob_sigma));
                push("dataset.synthetic.noise", format_f64(p.noise));
                push("dataset.synthetic.train_count", p.train_count.to_string());
            }
            DatasetSource::Idx {
                images,
                labels,
                crop,
            } => {
                push("dataset.source", "idx".into());
                push("dataset.sample_count", self.dataset.sample_count.to_string());
                push("dataset.idx.images", images.display().to_string());
                push("dataset.idx.labels", labels.display().to_string());
                push(
                    "dataset.idx.crop",
                    crop.map(|c| c.to_string()).unwrap_or_default(),
                );
            }
        }
        push(
            "attack.kinds",
            self.kinds
                .iter()
                .map(|k| k.tag())
                .collect::<Vec<_>>()
                .join(","),
        );
        for (prefix, a) in [("attack.l2.", &self.attack_l2), ("attack.cos.", &self.attack_cos)] {
            push(&format!("{prefix}steps"), a.steps.to_string());
            push(&format!("{prefix}lr"), format_f64(a.lr));
            push(&format!("{prefix}beta1"), format_f64(a.beta1));
            push(&format!("{prefix}beta2"), format_f64(a.beta2));
            push(&format!("{prefix}adam_eps"), format_f64(a.adam_eps));
            push(&format!("{prefix}alpha_tv"), format_f64(a.alpha_tv));
            push(&format!("{prefix}restarts"), a.restarts.to_string());
            push(
                &format!("{prefix}init"),
                match a.init_mode {
                    InitMode::RandomUniform => "random".to_string(),
                    InitMode::LocalPerturb { magnitude } => {
                        format!("local:{}", format_f64(magnitude))
                    }
                },
            );
            push(&format!("{prefix}fd_step"), format_f64(a.fd_step));
        }
        push("proxy.max_iters", self.proxy.power.max_iters.to_string());
        push("proxy.tol", format_f64(self.proxy.power.tol));
        push("proxy.fd_step", format_f64(self.proxy.fd_step));
        out
    }

    /// SHA-256 of the canonical rendering, hex-encoded.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_text().as_bytes());
        let bytes = hasher.finalize();
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn apply_attack_key(a: &mut AttackConfig, field: &str, key: &str, value: &str) -> Result<()> {
    match field {
        "steps" => a.steps = parse_usize(key, value)?,
        "lr" => a.lr = parse_f64(key, value)?,
        "beta1" => a.beta1 = parse_f64(key, value)?,
        "beta2" => a.beta2 = parse_f64(key, value)?,
        "adam_eps" => a.adam_eps = parse_f64(key, value)?,
        "alpha_tv" => a.alpha_tv = parse_f64(key, value)?,
        "restarts" => a.restarts = parse_usize(key, value)?,
        "fd_step" => a.fd_step = parse_f64(key, value)?,
        "init" => {
            a.init_mode = if value == "random" {
                InitMode::RandomUniform
            } else if let Some(mag) = value.strip_prefix("local:") {
                InitMode::LocalPerturb {
                    magnitude: parse_f64(key, mag)?,
                }
            } else {
                return Err(Error::Config(format!(
                    "{key}: expected 'random' or 'local:<magnitude>', got '{value}'"
                )));
            }
        }
        _ => return Err(Error::Config(format!("unknown key '{key}'"))),
    }
    Ok(())
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected an unsigned integer, got '{value}'")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected an unsigned integer, got '{value}'")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let x: f64 = value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got '{value}'")))?;
    if !x.is_finite() {
        return Err(Error::Config(format!("{key}: must be finite")));
    }
    Ok(x)
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|p| parse_usize(key, p.trim()))
        .collect()
}

fn format_f64(x: f64) -> String {
    // Shortest round-trip representation keeps the canonical text stable.
    let s = format!("{x}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("nan") {
        s
    } else {
        format!("{s}.0")
    }
}
