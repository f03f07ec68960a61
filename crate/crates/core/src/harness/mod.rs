//! Experiment orchestration.
//!
//! `run_experiment` is the whole protocol: build (or load) the dataset,
//! train (or load) the classifier, then per sample compute the client
//! gradient, every vulnerability proxy, and one reconstruction per attack
//! loss, score it, and emit the correlation report. Samples run in
//! parallel; determinism comes from per-sample seed streams, never from
//! execution order.

pub mod config;
pub mod idx;
pub mod report;
pub mod synthetic;
pub mod svg;

pub use config::{DatasetConfig, DatasetSource, ExperimentConfig, ModelConfig, SyntheticParams};
pub use report::{CorrelationReport, KindCorrelations, ReportRow};

use rayon::prelude::*;

use crate::attack::{run_attack, AttackConfig};
use crate::error::{Error, Result};
use crate::gradmatch::{GradLossKind, GradTarget, ImageShape};
use crate::lavp::compute_proxies;
use crate::metrics::score_pair;
use crate::smallnet::{train_sgd, Sample, Weights};
use crate::tensorcore::{stream_id, SeededRng};

// Role tags for stream derivation under the master seed.
const TAG_TRAIN: u64 = 0x74726169; // "trai"
const TAG_DATA_TRAIN: u64 = 0x64617461; // "data"
const TAG_DATA_EVAL: u64 = 0x6576616c; // "eval"
const TAG_PROXY: u64 = 0x70726f78; // "prox"
const TAG_ATTACK: u64 = 0x61747461; // "atta"

/// Evaluation samples (the ones attacked) plus training samples.
pub struct Dataset {
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

/// Builds the dataset described by the config, deterministically from the
/// master seed.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let shape = cfg.image_shape()?;
    let classes = cfg.net_spec()?.class_count();
    match &cfg.dataset.source {
        DatasetSource::Synthetic(p) => {
            let mut train_rng =
                SeededRng::new(cfg.master_seed, stream_id(&[TAG_DATA_TRAIN]));
            let mut eval_rng = SeededRng::new(cfg.master_seed, stream_id(&[TAG_DATA_EVAL]));
            let train = synthetic::gen_synthetic(
                shape,
                p.classes,
                p.blob_sigma,
                p.noise,
                p.train_count,
                &mut train_rng,
            );
            let eval = synthetic::gen_synthetic(
                shape,
                p.classes,
                p.blob_sigma,
                p.noise,
                cfg.dataset.sample_count,
                &mut eval_rng,
            );
            Ok(Dataset { train, eval })
        }
        DatasetSource::Idx {
            images,
            labels,
            crop,
        } => {
            let eval = idx::load_idx(
                images,
                labels,
                cfg.dataset.sample_count,
                shape,
                *crop,
                classes,
            )?;
            if eval.len() < cfg.dataset.sample_count {
                return Err(Error::Data(format!(
                    "dataset holds {} samples, config wants {}",
                    eval.len(),
                    cfg.dataset.sample_count
                )));
            }
            // Desk-scale lab: the classifier trains on the same pool.
            Ok(Dataset {
                train: eval.clone(),
                eval,
            })
        }
    }
}

/// Trains the classifier on the dataset, or loads pre-trained weights
/// when the config names them.
pub fn obtain_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<Weights> {
    if let Some(path) = &cfg.model.load {
        let (w, _seed) = Weights::load(path)?;
        if w.spec() != &cfg.net_spec()? {
            return Err(Error::Config(format!(
                "loaded weights from {} do not match the configured architecture",
                path.display()
            )));
        }
        return Ok(w);
    }
    let spec = cfg.net_spec()?;
    let mut rng = SeededRng::new(cfg.master_seed, stream_id(&[TAG_TRAIN]));
    train_sgd(
        &spec,
        &data.train,
        cfg.model.train_epochs,
        cfg.model.train_lr,
        &mut rng,
    )
}

fn attack_seed(cfg: &ExperimentConfig, kind: GradLossKind, sample_id: usize) -> u64 {
    let kind_tag = match kind {
        GradLossKind::L2 => 0u64,
        GradLossKind::Cosine => 1u64,
    };
    stream_id(&[cfg.master_seed, TAG_ATTACK, kind_tag, sample_id as u64])
}

/// Full pipeline for one sample: target gradient, proxies, one attack and
/// score per configured loss kind. Failures land in the row status.
pub fn process_sample(
    cfg: &ExperimentConfig,
    w: &Weights,
    shape: ImageShape,
    sample_id: usize,
    sample: &Sample,
) -> ReportRow {
    let mut row = ReportRow::empty(sample_id, sample.label);

    let target = match GradTarget::from_sample(w, sample) {
        Ok(t) => t,
        Err(e) => {
            row.mark_failed(&format!("target: {e}"));
            return row;
        }
    };

    let proxy_seed = stream_id(&[cfg.master_seed, TAG_PROXY]);
    match compute_proxies(w, sample, sample_id, cfg.proxy, proxy_seed) {
        Ok(p) => {
            row.grad_norm = p.grad_norm;
            row.l2_max = p.l2_max;
            row.l2_min = p.l2_min;
            row.cos_max = p.cos_max;
            row.cos_min = p.cos_min;
            row.fusion = p.fusion;
        }
        Err(e) => {
            row.mark_failed(&format!("proxies: {e}"));
            return row;
        }
    }

    for &kind in &cfg.kinds {
        let mut attack_cfg: AttackConfig = cfg.attack_for(kind).clone();
        attack_cfg.kind = kind;
        attack_cfg.seed = attack_seed(cfg, kind, sample_id);
        match run_attack(&attack_cfg, w, &target, sample, shape) {
            Ok(res) => match score_pair(&res.x_rec, &sample.pixels, shape) {
                Ok(scores) => match kind {
                    GradLossKind::L2 => {
                        row.mse_l2 = scores.mse;
                        row.ssim_l2 = scores.ssim;
                        row.psnr_l2 = scores.psnr;
                        row.gmfinal_l2 = res.final_gm_loss;
                    }
                    GradLossKind::Cosine => {
                        row.mse_cos = scores.mse;
                        row.ssim_cos = scores.ssim;
                        row.psnr_cos = scores.psnr;
                        row.gmfinal_cos = res.final_gm_loss;
                    }
                },
                Err(e) => row.mark_failed(&format!("score {}: {e}", kind.tag())),
            },
            Err(e) => row.mark_failed(&format!("attack {}: {e}", kind.tag())),
        }
    }
    row
}

/// Runs the whole experiment and writes every artifact into the output
/// directory. Returns the rows and the correlation report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<ReportRow>, CorrelationReport)> {
    cfg.validate()?;
    let shape = cfg.image_shape()?;
    let data = build_dataset(cfg)?;
    let weights = obtain_model(cfg, &data)?;

    let rows = run_samples(cfg, &weights, shape, &data.eval)?;
    let report = report::compute_correlations(&rows, &cfg.kinds, &cfg.digest())?;

    std::fs::create_dir_all(&cfg.output_dir)?;
    weights.save(&cfg.output_dir.join("model.json"), cfg.master_seed)?;
    report::emit_report(&rows, &report, &cfg.output_dir)?;
    Ok((rows, report))
}

/// Proxy + attack pipeline over all samples, parallel up to the
/// configured worker count.
pub fn run_samples(
    cfg: &ExperimentConfig,
    weights: &Weights,
    shape: ImageShape,
    samples: &[Sample],
) -> Result<Vec<ReportRow>> {
    let work = |samples: &[Sample]| -> Vec<ReportRow> {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| process_sample(cfg, weights, shape, i, s))
            .collect()
    };
    if cfg.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(pool.install(|| work(samples)))
    } else {
        Ok(work(samples))
    }
}

/// Computes proxies only (no attacks) for every sample; rows carry NaN in
/// the attack columns.
pub fn run_proxies_only(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    let data = build_dataset(cfg)?;
    let weights = obtain_model(cfg, &data)?;
    let proxy_seed = stream_id(&[cfg.master_seed, TAG_PROXY]);

    let rows: Vec<ReportRow> = data
        .eval
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut row = ReportRow::empty(i, s.label);
            match compute_proxies(&weights, s, i, cfg.proxy, proxy_seed) {
                Ok(p) => {
                    row.grad_norm = p.grad_norm;
                    row.l2_max = p.l2_max;
                    row.l2_min = p.l2_min;
                    row.cos_max = p.cos_max;
                    row.cos_min = p.cos_min;
                    row.fusion = p.fusion;
                }
                Err(e) => row.mark_failed(&format!("proxies: {e}")),
            }
            row
        })
        .collect();
    Ok(rows)
}

/// Re-renders correlations, plots, and `report.json` from an existing
/// `samples.csv` (the CSV is the source of truth; the digest is recomputed
/// from its bytes).
pub fn render_from_samples(dir: &std::path::Path) -> Result<CorrelationReport> {
    let csv_path = dir.join("samples.csv");
    let text = std::fs::read_to_string(&csv_path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", csv_path.display())))?;
    let rows = report::parse_samples_csv(&text)?;

    // A kind participates when any usable row carries a finite final loss.
    let mut kinds = Vec::new();
    for kind in [GradLossKind::L2, GradLossKind::Cosine] {
        let present = rows
            .iter()
            .filter(|r| r.is_ok())
            .any(|r| r.score_value(kind, "gmfinal").is_finite());
        if present {
            kinds.push(kind);
        }
    }
    if kinds.is_empty() {
        return Err(Error::Data(
            "samples.csv holds no finite attack outcomes to report on".into(),
        ));
    }

    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(b"samples.csv:");
    hasher.update(text.as_bytes());
    let digest: String = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();

    let report = report::compute_correlations(&rows, &kinds, &digest)?;
    report::emit_report(&rows, &report, dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small config that exercises the full pipeline quickly.
    fn tiny_config(dir: &std::path::Path) -> ExperimentConfig {
        let text = format!(
            "\
output_dir = {}
master_seed = 5
model.layers = 16,8,2
image.height = 4
image.width = 4
dataset.sample_count = 4
dataset.synthetic.classes = 2
dataset.synthetic.train_count = 32
dataset.synthetic.noise = 0.2
model.train.epochs = 8
attack.l2.steps = 25
attack.l2.restarts = 2
attack.cos.steps = 25
attack.cos.restarts = 2
proxy.max_iters = 200
",
            dir.display()
        );
        ExperimentConfig::from_str_checked(&text).unwrap()
    }

    #[test]
    fn full_pipeline_produces_artifacts_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let (rows, report) = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(report.kinds.len(), 2);
        assert!(dir.path().join("samples.csv").exists());
        assert!(dir.path().join("model.json").exists());
        assert!(dir.path().join("model.bin").exists());

        let first = std::fs::read(dir.path().join("samples.csv")).unwrap();
        let (rows2, _) = run_experiment(&cfg).unwrap();
        let second = std::fs::read(dir.path().join("samples.csv")).unwrap();
        assert_eq!(first, second, "pipeline must be byte-deterministic");
        for (a, b) in rows.iter().zip(&rows2) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn proxies_independent_of_attacks() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let (rows, _) = run_experiment(&cfg).unwrap();
        let proxy_rows = run_proxies_only(&cfg).unwrap();
        for (full, proxy) in rows.iter().zip(&proxy_rows) {
            assert_eq!(full.grad_norm, proxy.grad_norm);
            assert_eq!(full.l2_max, proxy.l2_max);
            assert_eq!(full.cos_min, proxy.cos_min);
            assert!(proxy.mse_l2.is_nan());
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.workers = 1;
        let (rows1, _) = run_experiment(&cfg).unwrap();
        cfg.workers = 2;
        let (rows2, _) = run_experiment(&cfg).unwrap();
        assert_eq!(rows1, rows2);
    }

    #[test]
    fn render_from_samples_reproduces_correlations() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let (_, report) = run_experiment(&cfg).unwrap();
        let rerendered = render_from_samples(dir.path()).unwrap();
        for (a, b) in report.kinds.iter().zip(&rerendered.kinds) {
            assert_eq!(a.kind, b.kind);
            for (ra, rb) in a.coefficients.iter().zip(&b.coefficients) {
                for (ca, cb) in ra.iter().zip(rb) {
                    assert!(
                        (ca.is_nan() && cb.is_nan()) || ca == cb,
                        "correlations must be recomputable from samples.csv alone"
                    );
                }
            }
        }
    }

    #[test]
    fn correlation_matches_manual_spearman_on_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let (rows, report) = run_experiment(&cfg).unwrap();
        let ok: Vec<&ReportRow> = rows.iter().filter(|r| r.is_ok()).collect();
        let a: Vec<f64> = ok.iter().map(|r| r.l2_max).collect();
        let b: Vec<f64> = ok.iter().map(|r| r.mse_l2).collect();
        let want = crate::metrics::spearman(&a, &b).unwrap();
        let got = report
            .coefficient(GradLossKind::L2, "l2_max", "mse")
            .unwrap();
        assert_eq!(got, want);
    }
}
