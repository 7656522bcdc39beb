use rand::seq::index::sample;

use super::Tensor;
use crate::rng::seeded;

/// Settings for a central-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Finite-difference step.
    pub step: f64,
    /// Relative errors divide by `max(|analytic|, |numeric|, floor)`, so that
    /// near-zero gradients are compared absolutely.
    pub floor: f64,
    /// Check at most this many randomly chosen coordinates per tensor.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { step: 1e-5, floor: 1e-3, max_per_tensor: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Offender {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<Offender>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

impl GradCheck {
    pub fn sampled(max_per_tensor: usize, seed: u64) -> Self {
        Self { max_per_tensor: Some(max_per_tensor), seed, ..Self::default() }
    }

    /// Compares `analytic` against central differences of `loss` around `params`.
    pub fn run<F>(&self, mut loss: F, params: &[Tensor], analytic: &[Tensor]) -> GradCheckReport
    where
        F: FnMut(&[Tensor]) -> f64,
    {
        assert_eq!(params.len(), analytic.len(), "one analytic gradient per parameter tensor");
        let mut rng = seeded(self.seed);
        let mut probe = params.to_vec();
        let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, checked: 0 };
        for t in 0..params.len() {
            assert_eq!(params[t].shape(), analytic[t].shape(), "gradient shape for tensor {t}");
            let n = params[t].len();
            let coords: Vec<usize> = match self.max_per_tensor {
                Some(k) if k < n => {
                    let mut v = sample(&mut rng, n, k).into_vec();
                    v.sort_unstable();
                    v
                }
                _ => (0..n).collect(),
            };
            for i in coords {
                let orig = params[t].data()[i];
                probe[t].data_mut()[i] = orig + self.step;
                let up = loss(&probe);
                probe[t].data_mut()[i] = orig - self.step;
                let down = loss(&probe);
                probe[t].data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * self.step);
                let a = analytic[t].data()[i];
                let denom = a.abs().max(numeric.abs()).max(self.floor);
                let rel = (a - numeric).abs() / denom;
                report.checked += 1;
                if rel > report.max_rel_err || rel.is_nan() {
                    report.max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
                    report.worst = Some(Offender { tensor: t, index: i, analytic: a, numeric });
                }
            }
        }
        report
    }
}

/// Shorthand for [`GradCheck::run`] with default settings.
pub fn grad_check<F>(loss: F, params: &[Tensor], analytic: &[Tensor]) -> GradCheckReport
where
    F: FnMut(&[Tensor]) -> f64,
{
    GradCheck::default().run(loss, params, analytic)
}
