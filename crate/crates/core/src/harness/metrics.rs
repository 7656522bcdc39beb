//! Detection metrics and the 2-D latent projection.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::linalg::symmetric_eigen;
use crate::nncore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Samples with `score >= threshold` count as positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve over every distinct score plus its trapezoid area.
///
/// The curve starts at `(0, 0)` with threshold `+∞` and ends at `(1, 1)`.
/// Tied scores move both rates in one step, which gives ties half credit.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<(Vec<RocPoint>, f64), HarnessError> {
    if scores.len() != labels.len() {
        return Err(HarnessError::Metric(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(HarnessError::Metric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(HarnessError::Metric(format!("need both classes, got {pos} positive and {neg} negative")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut curve = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let p = RocPoint { threshold: t, fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64 };
        let last = curve.last().expect("non-empty");
        auc += (p.fpr - last.fpr) * (p.tpr + last.tpr) / 2.0;
        curve.push(p);
    }
    Ok((curve, auc))
}

/// Trapezoid area under an already computed curve.
pub fn trapezoid_auc(curve: &[RocPoint]) -> f64 {
    curve.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
}

/// Counts at one threshold; positive means `score > threshold`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn false_positive_rate(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

pub fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > threshold, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `N × 2` coordinates.
    pub coords: Tensor,
    /// Unit principal directions, largest variance first.
    pub components: [Vec<f64>; 2],
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

/// Projection onto the top two principal directions of the sample
/// covariance (divisor `N - 1`). Each direction is signed so that its
/// largest-magnitude entry is positive.
pub fn pca2(latents: &Tensor) -> Result<Projection, HarnessError> {
    if latents.rank() != 2 || latents.rows() < 3 || latents.cols() < 2 {
        return Err(HarnessError::Metric(format!("pca2 needs N ≥ 3 rows and ≥ 2 columns, got {:?}", latents.shape())));
    }
    let (n, d) = (latents.rows(), latents.cols());
    let mean = latents.sum_rows().scale(1.0 / n as f64);
    let mut centered = latents.clone();
    for r in 0..n {
        for (v, m) in centered.row_mut(r).iter_mut().zip(mean.data()) {
            *v -= m;
        }
    }
    let cov =
        centered.t_matmul(&centered).map_err(|e| HarnessError::Metric(e.to_string()))?.scale(1.0 / (n - 1) as f64);
    let (eigenvalues, vectors) = symmetric_eigen(cov.data(), d);
    let component = |k: usize| {
        let mut v = vectors[k * d..(k + 1) * d].to_vec();
        let lead = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let components = [component(0), component(1)];
    let coords = Tensor::from_fn(n, 2, |r, k| centered.row(r).iter().zip(&components[k]).map(|(a, b)| a * b).sum());
    Ok(Projection { coords, components, eigenvalues })
}
