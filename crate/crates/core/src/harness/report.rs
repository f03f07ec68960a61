//! Result rows, correlation tables, and artifact emission.
//!
//! `samples.csv` holds one flat row per sample (schema below) with full
//! 17-significant-digit reals, UTF-8, LF line endings. `correlations.csv`
//! holds the Spearman table and parses back into an identical
//! [`CorrelationReport`]. Scatter plots are standalone SVGs; `report.json`
//! stamps the config digest and environment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradmatch::{GradLossKind, ImageShape};
use crate::metrics;

/// Column order of the proxy rows in every correlation table.
pub const PROXY_NAMES: [&str; 6] = ["grad_norm", "l2_max", "l2_min", "cos_max", "cos_min", "fusion"];

/// Score order of the correlation columns.
pub const SCORE_NAMES: [&str; 3] = ["mse", "ssim", "psnr"];

pub const SAMPLES_CSV_HEADER: &str = "sample_id,label,grad_norm,l2_max,l2_min,cos_max,cos_min,\
fusion,mse_l2,ssim_l2,psnr_l2,gmfinal_l2,mse_cos,ssim_cos,psnr_cos,gmfinal_cos,status";

/// One sample's full pipeline outcome. Fields that were not produced
/// (failed or skipped stages) hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub sample_id: usize,
    pub label: usize,
    pub grad_norm: f64,
    pub l2_max: f64,
    pub l2_min: f64,
    pub cos_max: f64,
    pub cos_min: f64,
    pub fusion: f64,
    pub mse_l2: f64,
    pub ssim_l2: f64,
    pub psnr_l2: f64,
    pub gmfinal_l2: f64,
    pub mse_cos: f64,
    pub ssim_cos: f64,
    pub psnr_cos: f64,
    pub gmfinal_cos: f64,
    /// `ok`, or `failed:<reason>` with the reason kept comma-free.
    pub status: String,
}

impl ReportRow {
    pub fn empty(sample_id: usize, label: usize) -> Self {
        Self {
            sample_id,
            label,
            grad_norm: f64::NAN,
            l2_max: f64::NAN,
            l2_min: f64::NAN,
            cos_max: f64::NAN,
            cos_min: f64::NAN,
            fusion: f64::NAN,
            mse_l2: f64::NAN,
            ssim_l2: f64::NAN,
            psnr_l2: f64::NAN,
            gmfinal_l2: f64::NAN,
            mse_cos: f64::NAN,
            ssim_cos: f64::NAN,
            psnr_cos: f64::NAN,
            gmfinal_cos: f64::NAN,
            status: "ok".into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn mark_failed(&mut self, reason: &str) {
        // one status cell per row; commas would break the flat schema
        let clean = reason.replace([',', '\n'], ";");
        if self.is_ok() {
            self.status = format!("failed:{clean}");
        } else {
            self.status.push_str(&format!("; {clean}"));
        }
    }

    pub fn proxy_value(&self, name: &str) -> f64 {
        match name {
            "grad_norm" => self.grad_norm,
            "l2_max" => self.l2_max,
            "l2_min" => self.l2_min,
            "cos_max" => self.cos_max,
            "cos_min" => self.cos_min,
            "fusion" => self.fusion,
            _ => f64::NAN,
        }
    }

    pub fn score_value(&self, kind: GradLossKind, name: &str) -> f64 {
        match (kind, name) {
            (GradLossKind::L2, "mse") => self.mse_l2,
            (GradLossKind::L2, "ssim") => self.ssim_l2,
            (GradLossKind::L2, "psnr") => self.psnr_l2,
            (GradLossKind::L2, "gmfinal") => self.gmfinal_l2,
            (GradLossKind::Cosine, "mse") => self.mse_cos,
            (GradLossKind::Cosine, "ssim") => self.ssim_cos,
            (GradLossKind::Cosine, "psnr") => self.psnr_cos,
            (GradLossKind::Cosine, "gmfinal") => self.gmfinal_cos,
            _ => f64::NAN,
        }
    }
}

/// Full 17-significant-digit decimal rendering; round-trips every f64.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_real(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Data(format!("bad real value '{s}' in CSV")))
}

pub fn samples_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(SAMPLES_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.sample_id,
            r.label,
            format_real(r.grad_norm),
            format_real(r.l2_max),
            format_real(r.l2_min),
            format_real(r.cos_max),
            format_real(r.cos_min),
            format_real(r.fusion),
            format_real(r.mse_l2),
            format_real(r.ssim_l2),
            format_real(r.psnr_l2),
            format_real(r.gmfinal_l2),
            format_real(r.mse_cos),
            format_real(r.ssim_cos),
            format_real(r.psnr_cos),
            format_real(r.gmfinal_cos),
            r.status,
        ));
    }
    out
}

pub fn parse_samples_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("samples.csv is empty".into()))?;
    if header != SAMPLES_CSV_HEADER {
        return Err(Error::Data(format!(
            "samples.csv header mismatch: got '{header}'"
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 17 {
            return Err(Error::Data(format!(
                "samples.csv line {}: expected 17 fields, got {}",
                i + 2,
                parts.len()
            )));
        }
        rows.push(ReportRow {
            sample_id: parts[0]
                .parse()
                .map_err(|_| Error::Data(format!("bad sample_id '{}'", parts[0])))?,
            label: parts[1]
                .parse()
                .map_err(|_| Error::Data(format!("bad label '{}'", parts[1])))?,
            grad_norm: parse_real(parts[2])?,
            l2_max: parse_real(parts[3])?,
            l2_min: parse_real(parts[4])?,
            cos_max: parse_real(parts[5])?,
            cos_min: parse_real(parts[6])?,
            fusion: parse_real(parts[7])?,
            mse_l2: parse_real(parts[8])?,
            ssim_l2: parse_real(parts[9])?,
            psnr_l2: parse_real(parts[10])?,
            gmfinal_l2: parse_real(parts[11])?,
            mse_cos: parse_real(parts[12])?,
            ssim_cos: parse_real(parts[13])?,
            psnr_cos: parse_real(parts[14])?,
            gmfinal_cos: parse_real(parts[15])?,
            status: parts[16].to_string(),
        });
    }
    Ok(rows)
}

/// Spearman table for one attack kind: 6 proxies x 3 scores.
#[derive(Debug, Clone, PartialEq)]
pub struct KindCorrelations {
    pub kind: GradLossKind,
    /// `[proxy][score]` per [`PROXY_NAMES`] x [`SCORE_NAMES`]; NaN marks a
    /// degenerate (constant) column.
    pub coefficients: [[f64; 3]; 6],
}

/// The artifact's rank-correlation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    /// Rows that entered the correlations.
    pub sample_count: usize,
    /// Failed rows excluded from them.
    pub excluded: usize,
    pub config_digest: String,
    pub kinds: Vec<KindCorrelations>,
}

impl CorrelationReport {
    pub fn coefficient(&self, kind: GradLossKind, proxy: &str, score: &str) -> Option<f64> {
        let k = self.kinds.iter().find(|k| k.kind == kind)?;
        let pi = PROXY_NAMES.iter().position(|&p| p == proxy)?;
        let si = SCORE_NAMES.iter().position(|&s| s == score)?;
        Some(k.coefficients[pi][si])
    }
}

/// Computes the Spearman table over the usable (status `ok`) rows.
///
/// Needs at least two usable rows. A proxy/score column that is constant
/// yields NaN in its cells rather than aborting the experiment.
pub fn compute_correlations(
    rows: &[ReportRow],
    kinds: &[GradLossKind],
    config_digest: &str,
) -> Result<CorrelationReport> {
    let usable: Vec<&ReportRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let excluded = rows.len() - usable.len();
    if usable.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "insufficient usable rows: {} ok of {} total",
            usable.len(),
            rows.len()
        )));
    }

    let mut report = CorrelationReport {
        sample_count: usable.len(),
        excluded,
        config_digest: config_digest.to_string(),
        kinds: Vec::new(),
    };
    for &kind in kinds {
        let mut table = [[f64::NAN; 3]; 6];
        for (pi, proxy) in PROXY_NAMES.iter().enumerate() {
            for (si, score) in SCORE_NAMES.iter().enumerate() {
                let a: Vec<f64> = usable.iter().map(|r| r.proxy_value(proxy)).collect();
                let b: Vec<f64> = usable.iter().map(|r| r.score_value(kind, score)).collect();
                if a.iter().chain(&b).any(|v| !v.is_finite()) {
                    continue;
                }
                table[pi][si] = match metrics::spearman(&a, &b) {
                    Ok(v) => v,
                    Err(Error::UndefinedCorrelation(_)) => f64::NAN,
                    Err(e) => return Err(e),
                };
            }
        }
        report.kinds.push(KindCorrelations {
            kind,
            coefficients: table,
        });
    }
    Ok(report)
}

pub const CORRELATIONS_CSV_HEADER: &str = "proxy,kind,mse,ssim,psnr";

pub fn correlations_csv(report: &CorrelationReport) -> String {
    let mut out = String::from(CORRELATIONS_CSV_HEADER);
    out.push('\n');
    for k in &report.kinds {
        for (pi, proxy) in PROXY_NAMES.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                proxy,
                k.kind.tag(),
                format_real(k.coefficients[pi][0]),
                format_real(k.coefficients[pi][1]),
                format_real(k.coefficients[pi][2]),
            ));
        }
    }
    out
}

/// Parses [`correlations_csv`] output back; `sample_count`, `excluded`,
/// and the digest live in `report.json`, so they are supplied by the
/// caller.
pub fn parse_correlations_csv(
    text: &str,
    sample_count: usize,
    excluded: usize,
    config_digest: &str,
) -> Result<CorrelationReport> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("correlations.csv is empty".into()))?;
    if header != CORRELATIONS_CSV_HEADER {
        return Err(Error::Data(format!(
            "correlations.csv header mismatch: got '{header}'"
        )));
    }
    let mut report = CorrelationReport {
        sample_count,
        excluded,
        config_digest: config_digest.to_string(),
        kinds: Vec::new(),
    };
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Data(format!(
                "correlations.csv: expected 5 fields, got {}",
                parts.len()
            )));
        }
        let kind = GradLossKind::parse(parts[1])?;
        let pi = PROXY_NAMES
            .iter()
            .position(|&p| p == parts[0])
            .ok_or_else(|| Error::Data(format!("unknown proxy '{}'", parts[0])))?;
        if report.kinds.last().map(|k| k.kind) != Some(kind) {
            report.kinds.push(KindCorrelations {
                kind,
                coefficients: [[f64::NAN; 3]; 6],
            });
        }
        let k = report.kinds.last_mut().unwrap();
        for si in 0..3 {
            k.coefficients[pi][si] = parse_real(parts[2 + si])?;
        }
    }
    Ok(report)
}

/// `report.json` contents: digest plus an environment stamp.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_digest: String,
    pub sample_count: usize,
    pub excluded: usize,
    pub tool: String,
    pub version: String,
    pub os: String,
    pub arch: String,
}

impl ReportMeta {
    pub fn new(report: &CorrelationReport) -> Self {
        Self {
            config_digest: report.config_digest.clone(),
            sample_count: report.sample_count,
            excluded: report.excluded,
            tool: "gradlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

/// Writes `samples.csv`, `correlations.csv`, all scatter SVGs, and
/// `report.json` into `out_dir`.
pub fn emit_report(rows: &[ReportRow], report: &CorrelationReport, out_dir: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Contract("emit_report needs at least one row".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("samples.csv"), samples_csv(rows))?;
    std::fs::write(out_dir.join("correlations.csv"), correlations_csv(report))?;

    let meta = ReportMeta::new(report);
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Data(format!("report.json encode: {e}")))?;
    std::fs::write(out_dir.join("report.json"), json)?;

    let usable: Vec<&ReportRow> = rows.iter().filter(|r| r.is_ok()).collect();
    for k in &report.kinds {
        for (pi, proxy) in PROXY_NAMES.iter().enumerate() {
            for (si, score) in SCORE_NAMES.iter().enumerate() {
                let points: Vec<(f64, f64)> = usable
                    .iter()
                    .map(|r| (r.proxy_value(proxy), r.score_value(k.kind, score)))
                    .filter(|(a, b)| a.is_finite() && b.is_finite())
                    .collect();
                let coeff = k.coefficients[pi][si];
                let title = format!(
                    "{proxy} vs {score} ({}) spearman {}",
                    k.kind.tag(),
                    if coeff.is_finite() {
                        format!("{coeff:+.3}")
                    } else {
                        "n/a".into()
                    }
                );
                let svg = super::svg::scatter_log_svg(&points, &title, proxy, score);
                let name = format!("scatter_{}_{}_{}.svg", k.kind.tag(), proxy, score);
                std::fs::write(out_dir.join(name), svg)?;
            }
        }
    }
    Ok(())
}

/// 8-bit ASCII PGM, the harness image format for reconstructions.
pub fn write_pgm(path: &Path, pixels: &[f64], shape: ImageShape) -> Result<()> {
    if pixels.len() != shape.len() {
        return Err(Error::Dimension {
            context: "write_pgm",
            expected: shape.len(),
            actual: pixels.len(),
        });
    }
    let mut out = format!("P2\n{} {}\n255\n", shape.width(), shape.height());
    for r in 0..shape.height() {
        let row: Vec<String> = (0..shape.width())
            .map(|c| {
                let v = (pixels[r * shape.width() + c].clamp(0.0, 1.0) * 255.0).round() as u8;
                v.to_string()
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: usize, seedish: f64) -> ReportRow {
        let mut r = ReportRow::empty(id, id % 3);
        r.grad_norm = 1.0 + seedish;
        r.l2_max = 10.0 * seedish + 0.1;
        r.l2_min = seedish * 0.01 + 1e-6;
        r.cos_max = seedish + 0.2;
        r.cos_min = seedish * 0.5 + 1e-4;
        r.fusion = (r.l2_max * r.cos_min).sqrt();
        r.mse_l2 = 0.01 * seedish;
        r.ssim_l2 = 1.0 - seedish * 0.1;
        r.psnr_l2 = 20.0 + seedish;
        r.gmfinal_l2 = seedish * 1e-3;
        r.mse_cos = 0.02 * seedish + 0.001;
        r.ssim_cos = 0.9 - seedish * 0.05;
        r.psnr_cos = 18.0 + 0.5 * seedish;
        r.gmfinal_cos = seedish * 1e-2;
        r
    }

    fn rows(n: usize) -> Vec<ReportRow> {
        (0..n).map(|i| row(i, (i as f64 * 0.37).sin().abs() + 0.1)).collect()
    }

    #[test]
    fn samples_csv_round_trips_exactly() {
        let mut rs = rows(5);
        rs[3].mark_failed("attack cos: all restarts degenerate, sadly");
        let text = samples_csv(&rs);
        assert_eq!(text.lines().count(), 6);
        assert!(text.ends_with('\n'));
        let parsed = parse_samples_csv(&text).unwrap();
        for (a, b) in rs.iter().zip(&parsed) {
            // NaN-aware comparison via re-rendering
            assert_eq!(samples_csv(&[a.clone()]), samples_csv(&[b.clone()]));
        }
    }

    #[test]
    fn header_is_exact() {
        assert_eq!(
            SAMPLES_CSV_HEADER,
            "sample_id,label,grad_norm,l2_max,l2_min,cos_max,cos_min,fusion,\
             mse_l2,ssim_l2,psnr_l2,gmfinal_l2,mse_cos,ssim_cos,psnr_cos,gmfinal_cos,status"
        );
    }

    #[test]
    fn status_reason_is_comma_free() {
        let mut r = ReportRow::empty(0, 0);
        r.mark_failed("a, b, c");
        assert!(!r.status.contains(','));
        r.mark_failed("second");
        assert!(r.status.starts_with("failed:"));
        assert!(r.status.contains("second"));
    }

    #[test]
    fn correlations_round_trip_and_lookup() {
        let rs = rows(8);
        let kinds = [GradLossKind::L2, GradLossKind::Cosine];
        let rep = compute_correlations(&rs, &kinds, "digest123").unwrap();
        assert_eq!(rep.sample_count, 8);
        assert_eq!(rep.excluded, 0);

        let text = correlations_csv(&rep);
        let parsed = parse_correlations_csv(&text, 8, 0, "digest123").unwrap();
        assert_eq!(rep, parsed);

        for k in &rep.kinds {
            for row in &k.coefficients {
                for v in row {
                    assert!(v.is_nan() || (-1.0..=1.0).contains(v));
                }
            }
        }
        let c = rep.coefficient(GradLossKind::L2, "grad_norm", "mse").unwrap();
        assert!(c.is_finite());
    }

    #[test]
    fn correlations_need_two_usable_rows() {
        let mut rs = rows(2);
        rs[0].mark_failed("zero gradient");
        let err = compute_correlations(&rs, &[GradLossKind::L2], "d").unwrap_err();
        assert!(matches!(err, Error::UndefinedCorrelation(_)));
        assert!(err.to_string().contains("insufficient usable rows"));
    }

    #[test]
    fn failed_rows_are_excluded() {
        let mut rs = rows(6);
        rs[1].mark_failed("boom");
        rs[4].mark_failed("boom");
        let rep = compute_correlations(&rs, &[GradLossKind::L2], "d").unwrap();
        assert_eq!(rep.sample_count, 4);
        assert_eq!(rep.excluded, 2);
    }

    #[test]
    fn emit_report_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let rs = rows(4);
        let kinds = [GradLossKind::L2, GradLossKind::Cosine];
        let rep = compute_correlations(&rs, &kinds, "abc").unwrap();
        emit_report(&rs, &rep, dir.path()).unwrap();

        assert!(dir.path().join("samples.csv").exists());
        assert!(dir.path().join("correlations.csv").exists());
        assert!(dir.path().join("report.json").exists());
        // 2 kinds x 6 proxies x 3 scores scatter plots
        let svgs = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .ends_with(".svg")
            })
            .count();
        assert_eq!(svgs, 36);

        let meta: ReportMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(meta.config_digest, "abc");
        assert_eq!(meta.sample_count, 4);
    }

    #[test]
    fn pgm_output_shape() {
        let dir = tempfile::tempdir().unwrap();
        let shape = ImageShape::new(2, 3).unwrap();
        let path = dir.path().join("img.pgm");
        write_pgm(&path, &[0.0, 0.5, 1.0, 0.25, 0.75, 1.0], shape).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("P2\n3 2\n255\n"));
        assert!(text.contains("0 128 255"));
    }
}
