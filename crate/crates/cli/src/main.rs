//! `gradlab` command line.
//!
//! Subcommands mirror the pipeline stages: `train` the classifier,
//! `proxy` the vulnerability proxies, `attack` one sample, `run` the full
//! experiment, `report` a re-render from an existing samples.csv.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gradlab::attack::run_attack;
use gradlab::error::{Error, Result};
use gradlab::gradmatch::GradTarget;
use gradlab::harness::{
    self, build_dataset, obtain_model, report, run_experiment, run_proxies_only, ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "gradlab",
    about = "Gradient inversion attacks, Hessian-spectrum vulnerability proxies, and their rank-correlation evaluation",
    version
)]
struct Cli {
    /// Config file (flat `key = value`, dotted sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier and save its weights.
    Train,
    /// Run the gradient inversion attack on one sample and save the
    /// reconstruction.
    Attack {
        /// Sample index within the evaluation set.
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Compute vulnerability proxies for every sample (no attacks).
    Proxy,
    /// Full pipeline: train, proxies, attacks, correlation report.
    Run,
    /// Re-render correlations and plots from an existing samples.csv.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let data = build_dataset(cfg)?;
    let weights = obtain_model(cfg, &data)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("model.json");
    weights.save(&path, cfg.master_seed)?;
    println!("trained {:?} model -> {}", cfg.model.layers, path.display());
    Ok(())
}

fn cmd_attack(cfg: &ExperimentConfig, sample_id: usize) -> Result<()> {
    let shape = cfg.image_shape()?;
    let data = build_dataset(cfg)?;
    let weights = obtain_model(cfg, &data)?;
    let sample = data.eval.get(sample_id).ok_or_else(|| {
        Error::Config(format!(
            "sample {sample_id} out of range ({} samples)",
            data.eval.len()
        ))
    })?;
    let target = GradTarget::from_sample(&weights, sample)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    report::write_pgm(
        &cfg.output_dir.join(format!("original_{sample_id}.pgm")),
        &sample.pixels,
        shape,
    )?;

    for &kind in &cfg.kinds {
        let mut attack_cfg = cfg.attack_for(kind).clone();
        attack_cfg.kind = kind;
        attack_cfg.seed = cfg.master_seed;
        let res = run_attack(&attack_cfg, &weights, &target, sample, shape)?;
        let scores = gradlab::metrics::score_pair(&res.x_rec, &sample.pixels, shape)?;

        let tag = kind.tag();
        let json_path = cfg.output_dir.join(format!("attack_{sample_id}_{tag}.json"));
        let json = serde_json::to_string_pretty(&res)
            .map_err(|e| Error::Data(format!("attack result encode: {e}")))?;
        std::fs::write(&json_path, json)?;
        report::write_pgm(
            &cfg.output_dir.join(format!("recon_{sample_id}_{tag}.pgm")),
            &res.x_rec,
            shape,
        )?;
        println!(
            "{tag}: gm {:.3e} -> {:.3e} (restart {}), mse {:.4e}, ssim {:.4}, psnr {:.2} dB",
            res.initial_gm_loss,
            res.final_gm_loss,
            res.chosen_restart,
            scores.mse,
            scores.ssim,
            scores.psnr
        );
    }
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_proxy(cfg: &ExperimentConfig) -> Result<()> {
    let rows = run_proxies_only(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("samples.csv");
    std::fs::write(&path, report::samples_csv(&rows))?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    println!(
        "proxies for {} samples ({} failed) -> {}",
        rows.len(),
        failed,
        path.display()
    );
    Ok(())
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<()> {
    let (rows, rep) = run_experiment(cfg)?;
    println!(
        "{} samples ({} excluded), digest {}",
        rep.sample_count,
        rep.excluded,
        &rep.config_digest[..12.min(rep.config_digest.len())]
    );
    print_correlations(&rep);
    let failed: Vec<_> = rows.iter().filter(|r| !r.is_ok()).collect();
    for row in failed {
        println!("  sample {}: {}", row.sample_id, row.status);
    }
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_report(cfg: &ExperimentConfig) -> Result<()> {
    let rep = harness::render_from_samples(&cfg.output_dir)?;
    print_correlations(&rep);
    println!("re-rendered report in {}", cfg.output_dir.display());
    Ok(())
}

fn print_correlations(rep: &report::CorrelationReport) {
    for k in &rep.kinds {
        println!("spearman vs similarity scores, {} attack:", k.kind.tag());
        println!("  {:<10} {:>8} {:>8} {:>8}", "proxy", "mse", "ssim", "psnr");
        for (pi, proxy) in report::PROXY_NAMES.iter().enumerate() {
            let c = k.coefficients[pi];
            println!(
                "  {:<10} {:>8} {:>8} {:>8}",
                proxy,
                fmt_coeff(c[0]),
                fmt_coeff(c[1]),
                fmt_coeff(c[2])
            );
        }
    }
}

fn fmt_coeff(v: f64) -> String {
    if v.is_finite() {
        format!("{v:+.3}")
    } else {
        "n/a".into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Command::Train => cmd_train(&cfg),
        Command::Attack { sample } => cmd_attack(&cfg, sample),
        Command::Proxy => cmd_proxy(&cfg),
        Command::Run => cmd_run(&cfg),
        Command::Report => cmd_report(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
