//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use semguard::gpdetect::{rbf, GpModel};
use semguard::harness::Confusion;
use semguard::nncore::Tensor;
use semguard::rng::SeedRng;

pub fn gaussian(rows: usize, cols: usize, rng: &mut SeedRng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Posterior of a fitted model recomputed with an explicit matrix inverse.
pub fn dense_predict(model: &GpModel, z: &[f64]) -> (Vec<f64>, f64) {
    let train = model.training_points();
    let (m, d) = (train.rows(), train.cols());
    let ell = model.length_scale();
    let a =
        DMatrix::from_fn(m, m, |i, j| rbf(train.row(i), train.row(j), ell) + if i == j { model.jitter() } else { 0.0 });
    let inv = a.try_inverse().expect("invertible");
    let zs = model.standardizer().apply(z);
    let k = DVector::from_fn(m, |i, _| rbf(&zs, train.row(i), ell));
    let targets = DMatrix::from_fn(m, d, |i, j| train.get(i, j));
    let w = inv * &k;
    let mean = (w.transpose() * targets).iter().copied().collect();
    let var = 1.0 - k.dot(&w);
    (mean, var)
}

/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)` over every positive/negative pair.
pub fn pair_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

pub fn loop_confusion(scores: &[f64], labels: &[bool], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for i in 0..scores.len() {
        let flagged = scores[i] > threshold;
        if flagged && labels[i] {
            c.tp += 1;
        }
        if flagged && !labels[i] {
            c.fp += 1;
        }
        if !flagged && labels[i] {
            c.fn_ += 1;
        }
        if !flagged && !labels[i] {
            c.tn += 1;
        }
    }
    c
}

pub struct SvdProjection {
    pub components: [Vec<f64>; 2],
    pub variances: [f64; 2],
    pub coords: Vec<[f64; 2]>,
}

/// Top two right singular vectors of the centered data.
pub fn svd_pca2(x: &Tensor) -> SvdProjection {
    let (n, d) = (x.rows(), x.cols());
    let mut centered = DMatrix::from_fn(n, d, |i, j| x.get(i, j));
    for j in 0..d {
        let mean = centered.column(j).mean();
        centered.column_mut(j).add_scalar_mut(-mean);
    }
    let svd = centered.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let comp = |k: usize| -> Vec<f64> { vt.row(order[k]).iter().copied().collect() };
    let components = [comp(0), comp(1)];
    let variances = [0, 1].map(|k| svd.singular_values[order[k]].powi(2) / (n - 1) as f64);
    let coords = (0..n)
        .map(|i| [0, 1].map(|k| centered.row(i).iter().zip(&components[k]).map(|(a, b)| a * b).sum::<f64>()))
        .collect();
    SvdProjection { components, variances, coords }
}

/// Largest deviation between two vectors after aligning the sign of `b` to `a`.
pub fn max_diff_up_to_sign(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let s = if dot < 0.0 { -1.0 } else { 1.0 };
    a.iter().zip(b).map(|(x, y)| (x - s * y).abs()).fold(0.0, f64::max)
}
