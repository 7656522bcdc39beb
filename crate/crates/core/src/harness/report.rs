use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detect::{DetectionReport, ReconGrid};
use super::metrics::{confusion, roc_auc, Confusion};
use super::{io_err, ExperimentKind, HarnessError};
use crate::data::IMAGE_SIDE;

/// Contents of `summary.json` for a detection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub samples: usize,
    pub healthy: usize,
    pub faulty: usize,
    pub auc: Option<f64>,
    pub threshold: f64,
    pub confusion: Confusion,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub accuracy: Option<f64>,
    pub mean_score_healthy: Option<f64>,
    pub mean_score_faulty: Option<f64>,
    pub mse_healthy: Option<f64>,
    pub mse_faulty: Option<f64>,
    pub length_scale: f64,
    pub jitter: f64,
    pub attack_ratio_share: Option<f64>,
}

impl Summary {
    pub fn of(r: &DetectionReport) -> Self {
        let faulty = r.samples.iter().filter(|s| s.faulty).count();
        Self {
            kind: r.kind,
            seed: r.seed,
            samples: r.samples.len(),
            healthy: r.samples.len() - faulty,
            faulty,
            auc: r.auc,
            threshold: r.threshold,
            confusion: r.confusion,
            recall: r.confusion.recall(),
            precision: r.confusion.precision(),
            false_positive_rate: r.confusion.false_positive_rate(),
            accuracy: r.confusion.accuracy(),
            mean_score_healthy: r.mean_score(false),
            mean_score_faulty: r.mean_score(true),
            mse_healthy: r.mse_healthy(),
            mse_faulty: r.mse_faulty(),
            length_scale: r.length_scale,
            jitter: r.jitter,
            attack_ratio_share: r.attack_ratio_share(),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, HarnessError> {
    Ok(BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(io_err(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    write_text(path, &text)
}

/// Binary PGM with originals on the top row and reconstructions below.
pub fn write_pgm(path: &Path, grid: &ReconGrid) -> Result<(), HarnessError> {
    let cols = grid.originals.rows().max(1);
    let (w, h) = (cols * IMAGE_SIDE, 2 * IMAGE_SIDE);
    let mut pixels = vec![0u8; w * h];
    for (band, images) in [&grid.originals, &grid.reconstructions].into_iter().enumerate() {
        for (k, img) in images.iter_rows().enumerate() {
            for (p, v) in img.iter().enumerate() {
                let (y, x) = (band * IMAGE_SIDE + p / IMAGE_SIDE, k * IMAGE_SIDE + p % IMAGE_SIDE);
                pixels[y * w + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels);
    fs::write(path, out).map_err(io_err(path))
}

/// Writes every report file into `dir`, creating it if needed.
pub fn emit_report(report: &DetectionReport, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let path = dir.join("scores.csv");
    let mut w = create(&path)?;
    let io = io_err(&path);
    let res = (|| {
        writeln!(w, "index,label,score,mean_deviation,variance,recon_mse")?;
        for (i, s) in report.samples.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{},{},{},{}",
                u8::from(s.faulty),
                s.score.score,
                s.score.mean_deviation,
                s.score.variance,
                s.recon_mse
            )?;
        }
        w.flush()
    })();
    res.map_err(io)?;

    let mut roc = String::from("threshold,fpr,tpr\n");
    for p in &report.roc {
        let _ = writeln!(
            roc,
            "{},{},{}",
            if p.threshold.is_infinite() { "inf".into() } else { p.threshold.to_string() },
            p.fpr,
            p.tpr
        );
    }
    write_text(&dir.join("roc.csv"), &roc)?;

    write_json(&dir.join("confusion.json"), &report.confusion)?;

    let mut proj = String::from("index,label,pc1,pc2\n");
    for (i, (p, s)) in report.projection.iter().zip(&report.samples).enumerate() {
        let _ = writeln!(proj, "{i},{},{},{}", u8::from(s.faulty), p[0], p[1]);
    }
    write_text(&dir.join("projection.csv"), &proj)?;

    if !report.train_history.is_empty() {
        let path = dir.join("train_history.csv");
        crate::vae::write_history_csv(&report.train_history, create(&path)?).map_err(io_err(&path))?;
    }
    if !report.attack_comparison.is_empty() {
        let mut text = String::from("index,fgsm_mse,random_mse\n");
        for (i, (a, r)) in report.attack_comparison.iter().enumerate() {
            let _ = writeln!(text, "{i},{a},{r}");
        }
        write_text(&dir.join("attack_comparison.csv"), &text)?;
    }
    for g in &report.grids {
        write_pgm(&dir.join(format!("recon_{}.pgm", g.name)), g)?;
    }
    write_json(&dir.join("summary.json"), &Summary::of(report))
}

/// Parses `scores.csv` back into `(faulty, score)` pairs.
pub fn read_scores_csv(path: &Path) -> Result<Vec<(bool, f64)>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |line: usize| HarnessError::Metric(format!("{}: malformed line {line}", path.display()));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            let mut f = l.split(',').skip(1);
            let label = f.next().ok_or_else(|| bad(n + 1))?;
            let score = f.next().and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad(n + 1))?;
            Ok((label == "1", score))
        })
        .collect()
}

/// Human-readable digest of an output directory, recomputed from its files.
pub fn summarize_dir(dir: &Path) -> Result<String, HarnessError> {
    let mut out = String::new();
    let scores = dir.join("scores.csv");
    if scores.exists() {
        let rows = read_scores_csv(&scores)?;
        let s: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let l: Vec<bool> = rows.iter().map(|r| r.0).collect();
        let faulty = l.iter().filter(|&&x| x).count();
        let _ = writeln!(out, "samples: {} ({} healthy, {faulty} faulty)", rows.len(), rows.len() - faulty);
        match roc_auc(&s, &l) {
            Ok((_, auc)) => {
                let _ = writeln!(out, "auc: {auc:.4}");
            }
            Err(_) => out.push_str("auc: n/a (single class)\n"),
        }
        let summary_path = dir.join("summary.json");
        if summary_path.exists() {
            let text = fs::read_to_string(&summary_path).map_err(io_err(&summary_path))?;
            let summary: Summary = serde_json::from_str(&text)
                .map_err(|e| HarnessError::Metric(format!("{}: {e}", summary_path.display())))?;
            let c = confusion(&s, &l, summary.threshold);
            let _ = writeln!(out, "kind: {:?}, seed: {}", summary.kind, summary.seed);
            let _ = writeln!(out, "threshold: {}", summary.threshold);
            let _ = writeln!(out, "confusion: tp={} fp={} fn={} tn={}", c.tp, c.fp, c.fn_, c.tn);
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(out, "recall: {}, precision: {}", fmt(c.recall()), fmt(c.precision()));
            let _ = writeln!(out, "mse healthy: {}, faulty: {}", fmt(summary.mse_healthy), fmt(summary.mse_faulty));
        }
    }
    let episodes = dir.join("episodes.csv");
    if episodes.exists() {
        let text = fs::read_to_string(&episodes).map_err(io_err(&episodes))?;
        let means: Vec<f64> = text.lines().skip(1).filter_map(|l| l.split(',').nth(1)?.parse().ok()).collect();
        let k = means.len().min(10);
        if k > 0 {
            let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let _ = writeln!(out, "episodes: {}", means.len());
            let _ = writeln!(out, "mean reward, first {k}: {:.4}", avg(&means[..k]));
            let _ = writeln!(out, "mean reward, last {k}: {:.4}", avg(&means[means.len() - k..]));
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Metric(format!("{}: no scores.csv or episodes.csv found", dir.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::Tensor;

    #[test]
    fn pgm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let grid = ReconGrid {
            name: "t".into(),
            originals: Tensor::filled(&[2, 784], 1.0),
            reconstructions: Tensor::zeros(&[2, 784]),
        };
        let path = dir.path().join("g.pgm");
        write_pgm(&path, &grid).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n56 56\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = &bytes[header.len()..];
        assert_eq!(px.len(), 56 * 56);
        assert_eq!(px[0], 255);
        assert_eq!(px[56 * 28], 0);
    }

    #[test]
    fn empty_report_has_zero_counts() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&DetectionReport::empty(ExperimentKind::FeatureChange, 1), dir.path()).unwrap();
        let s: Summary = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!((s.samples, s.healthy, s.faulty, s.confusion.total()), (0, 0, 0, 0));
        assert_eq!(s.auc, None);
        assert!(read_scores_csv(&dir.path().join("scores.csv")).unwrap().is_empty());
    }
}
