//! Gaussian-process monitor for the latent space.
//!
//! The GP is fitted on healthy latent vectors after per-dimension
//! standardization. It regresses the standardized latent onto itself: all
//! output dimensions share a zero prior mean and one RBF kernel
//!
//! ```text
//! k(z, z') = exp(-‖z - z'‖² / (2ℓ²))
//! ```
//!
//! For a test latent `z*` with `k* = k(z*, Z)` the posterior is
//!
//! ```text
//! μ(z*)  = k*ᵀ (K + λI)⁻¹ Z
//! σ²(z*) = 1 - k*ᵀ (K + λI)⁻¹ k*
//! score  = ‖z* - μ(z*)‖² + σ²(z*)
//! ```
//!
//! Near the training data the mean reproduces the input and the variance is
//! small; far from it both terms grow (the mean reverts to 0, the variance
//! to 1), so the score is large.

use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky, cholesky_solve_matrix, solve_lower};
use crate::nncore::{Checkpoint, NnError, Tensor};

/// Jitter escalation stops after this value.
pub const MAX_JITTER: f64 = 1e-2;
/// Starting jitter when the configured value is zero and factorization fails.
pub const DEFAULT_JITTER: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum GpError {
    #[error("need at least 2 latents to fit, got {0}")]
    TooFewPoints(usize),
    #[error("length scale must be positive and finite, got {0}")]
    LengthScale(f64),
    #[error("jitter must be ≥ 0, got {0}")]
    Jitter(f64),
    #[error("kernel matrix not positive definite even with jitter {0}")]
    NotPositiveDefinite(f64),
    #[error("latent has {got} dimensions, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("calibration needs at least {min} healthy scores, got {got}")]
    TooFewScores { min: usize, got: usize },
    #[error("target false-positive rate must lie in (0,1), got {0}")]
    Fpr(f64),
    #[error("threshold must be positive, got {0}")]
    Threshold(f64),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("sidecar: {0}")]
    Sidecar(String),
}

pub fn rbf(a: &[f64], b: &[f64], length_scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (2.0 * length_scale * length_scale)).exp()
}

/// Per-dimension affine map to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; dimensions with (near) zero spread keep std 1.
    pub fn fit(x: &Tensor) -> Self {
        let (n, d) = (x.rows(), x.cols());
        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        let mut var = vec![0.0; d];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2) / n as f64;
            }
        }
        let std = var.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn apply_all(&self, x: &Tensor) -> Tensor {
        let d = x.cols();
        let data = x.iter_rows().flat_map(|r| self.apply(r)).collect();
        Tensor::from_parts(vec![x.rows(), d], data)
    }
}

/// Median of all pairwise Euclidean distances.
pub fn median_pairwise_distance(x: &Tensor) -> f64 {
    let n = x.rows();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthScale {
    /// Median pairwise distance of the standardized training latents,
    /// multiplied by the given factor.
    Median(f64),
    Fixed(f64),
}

impl Default for LengthScale {
    fn default() -> Self {
        LengthScale::Median(1.0)
    }
}

/// Result of [`GpModel::predict`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub score: f64,
    pub mean_deviation: f64,
    pub variance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    Normal,
    Anomalous,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    #[serde(flatten)]
    pub score: AnomalyScore,
    pub threshold: f64,
    pub flag: Flag,
}

impl AnomalyVerdict {
    /// Strict inequality: a score equal to the threshold is normal.
    pub fn new(score: AnomalyScore, threshold: f64) -> Self {
        let flag = if score.score > threshold { Flag::Anomalous } else { Flag::Normal };
        Self { score, threshold, flag }
    }
}

/// Scalar settings persisted next to the tensors of a fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpSidecar {
    pub length_scale: f64,
    pub jitter: f64,
    pub standardizer: Standardizer,
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpModel {
    /// Standardized training latents, `M × D`.
    train: Tensor,
    standardizer: Standardizer,
    length_scale: f64,
    /// Jitter that made the factorization succeed.
    jitter: f64,
    /// Lower Cholesky factor of `K + λI`, `M × M`.
    factor: Vec<f64>,
    /// `(K + λI)⁻¹ Z`, `M × D`.
    coeffs: Vec<f64>,
}

impl GpModel {
    /// Fits on raw latents; `length_scale` applies in standardized units.
    pub fn fit(latents: &Tensor, length_scale: LengthScale, jitter: f64) -> Result<Self, GpError> {
        if latents.rank() != 2 || latents.rows() < 2 {
            return Err(GpError::TooFewPoints(if latents.rank() == 2 { latents.rows() } else { 0 }));
        }
        if !(jitter >= 0.0) || !jitter.is_finite() {
            return Err(GpError::Jitter(jitter));
        }
        let standardizer = Standardizer::fit(latents);
        let train = standardizer.apply_all(latents);
        let ell = match length_scale {
            LengthScale::Fixed(l) => l,
            LengthScale::Median(f) => f * median_pairwise_distance(&train),
        };
        if !(ell > 0.0) || !ell.is_finite() {
            return Err(GpError::LengthScale(ell));
        }

        let m = train.rows();
        let mut k = vec![0.0; m * m];
        for i in 0..m {
            k[i * m + i] = 1.0;
            for j in 0..i {
                let v = rbf(train.row(i), train.row(j), ell);
                k[i * m + j] = v;
                k[j * m + i] = v;
            }
        }

        let mut lambda = jitter;
        let factor = loop {
            let mut kj = k.clone();
            for i in 0..m {
                kj[i * m + i] += lambda;
            }
            if let Some(l) = cholesky(&kj, m) {
                break l;
            }
            let next = if lambda == 0.0 { DEFAULT_JITTER } else { lambda * 10.0 };
            if next > MAX_JITTER * (1.0 + 1e-9) {
                return Err(GpError::NotPositiveDefinite(lambda));
            }
            lambda = next;
        };
        let coeffs = cholesky_solve_matrix(&factor, m, train.data(), train.cols());
        Ok(Self { train, standardizer, length_scale: ell, jitter: lambda, factor, coeffs })
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.train.cols()
    }

    pub fn len(&self) -> usize {
        self.train.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.train.rows() == 0
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// Standardized training latents.
    pub fn training_points(&self) -> &Tensor {
        &self.train
    }

    fn check_dim(&self, z: &[f64]) -> Result<(), GpError> {
        if z.len() != self.dim() {
            return Err(GpError::Dimension { expected: self.dim(), got: z.len() });
        }
        Ok(())
    }

    fn predict_standardized(&self, zs: &[f64]) -> Prediction {
        let m = self.len();
        let d = self.dim();
        let mut ks: Vec<f64> = self.train.iter_rows().map(|r| rbf(zs, r, self.length_scale)).collect();
        let mut mean = vec![0.0; d];
        for (i, &kv) in ks.iter().enumerate() {
            if kv != 0.0 {
                for (mj, c) in mean.iter_mut().zip(&self.coeffs[i * d..(i + 1) * d]) {
                    *mj += kv * c;
                }
            }
        }
        solve_lower(&self.factor, m, &mut ks);
        let variance = (1.0 - ks.iter().map(|v| v * v).sum::<f64>()).max(0.0);
        Prediction { mean, variance }
    }

    /// Posterior mean (standardized coordinates) and variance at a raw latent.
    pub fn predict(&self, z: &[f64]) -> Result<Prediction, GpError> {
        self.check_dim(z)?;
        Ok(self.predict_standardized(&self.standardizer.apply(z)))
    }

    pub fn anomaly_score(&self, z: &[f64]) -> Result<AnomalyScore, GpError> {
        self.check_dim(z)?;
        let zs = self.standardizer.apply(z);
        let p = self.predict_standardized(&zs);
        let mean_deviation: f64 = zs.iter().zip(&p.mean).map(|(a, b)| (a - b).powi(2)).sum();
        Ok(AnomalyScore { score: mean_deviation + p.variance, mean_deviation, variance: p.variance })
    }

    pub fn classify(&self, z: &[f64], threshold: f64) -> Result<AnomalyVerdict, GpError> {
        if !(threshold > 0.0) {
            return Err(GpError::Threshold(threshold));
        }
        Ok(AnomalyVerdict::new(self.anomaly_score(z)?, threshold))
    }

    /// Scores every row of `latents`.
    pub fn score_all(&self, latents: &Tensor) -> Result<Vec<AnomalyScore>, GpError> {
        latents.iter_rows().map(|r| self.anomaly_score(r)).collect()
    }

    pub fn sidecar(&self, threshold: Option<f64>) -> GpSidecar {
        GpSidecar {
            length_scale: self.length_scale,
            jitter: self.jitter,
            standardizer: self.standardizer.clone(),
            threshold,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let m = self.len();
        let mut c = Checkpoint::new();
        c.insert("train_latents", self.train.clone());
        c.insert("factor", Tensor::from_parts(vec![m, m], self.factor.clone()));
        c.insert("coefficients", Tensor::from_parts(vec![m, self.dim()], self.coeffs.clone()));
        c
    }

    pub fn from_parts(ckpt: &Checkpoint, sidecar: &GpSidecar) -> Result<Self, GpError> {
        let train = ckpt.require("train_latents")?.clone();
        let (m, d) = train.dims2("train_latents")?;
        let factor = ckpt.require("factor")?;
        let coeffs = ckpt.require("coefficients")?;
        if factor.shape() != [m, m] || coeffs.shape() != [m, d] || sidecar.standardizer.mean.len() != d {
            return Err(GpError::Sidecar("tensor shapes disagree with each other or the sidecar".into()));
        }
        Ok(Self {
            train,
            standardizer: sidecar.standardizer.clone(),
            length_scale: sidecar.length_scale,
            jitter: sidecar.jitter,
            factor: factor.data().to_vec(),
            coeffs: coeffs.data().to_vec(),
        })
    }
}

/// Minimum number of healthy scores accepted by [`calibrate_threshold`].
pub const MIN_CALIBRATION_SCORES: usize = 50;

/// Empirical `(1 - fpr)` quantile, nearest-rank convention: the
/// `⌈(1 - fpr)·n⌉`-th smallest score.
pub fn calibrate_threshold(healthy: &[f64], target_fpr: f64) -> Result<f64, GpError> {
    if healthy.len() < MIN_CALIBRATION_SCORES {
        return Err(GpError::TooFewScores { min: MIN_CALIBRATION_SCORES, got: healthy.len() });
    }
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(GpError::Fpr(target_fpr));
    }
    let mut s = healthy.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    // Guard the product against rounding just above an integer.
    let rank = (((1.0 - target_fpr) * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(s[rank.min(n) - 1])
}
