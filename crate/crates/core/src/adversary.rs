//! Fast gradient sign attacks on the semantic encoder.
//!
//! The attacked objective is the VAE loss itself, so no labels are involved.
//! Sampling noise is frozen for the duration of an attack, which makes the
//! input gradient a deterministic function of the image.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nncore::Tensor;
use crate::vae::{loss_and_gradients, FrozenNoise, VaeError, VaeModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub epsilon: f64,
    pub clamp: (f64, f64),
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self { epsilon: 0.3, clamp: (0.0, 1.0) }
    }
}

impl AttackSpec {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }
}

/// `∇ₓ` of the batch-mean VAE loss.
pub fn input_gradient(model: &VaeModel, x: &Tensor, noise: &FrozenNoise) -> Result<Tensor, VaeError> {
    Ok(loss_and_gradients(model, x, noise)?.1.input)
}

/// Sign with `sign(0) = 0`.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `clamp(x + ε · sign(∇ₓL), lo, hi)`.
pub fn fgsm(model: &VaeModel, x: &Tensor, spec: &AttackSpec, noise: &FrozenNoise) -> Result<Tensor, VaeError> {
    if !(spec.epsilon >= 0.0) {
        return Err(VaeError::Config(format!("epsilon must be ≥ 0, got {}", spec.epsilon)));
    }
    if spec.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let g = input_gradient(model, x, noise)?;
    Ok(x.zip_map(&g, |p, d| (p + spec.epsilon * sign(d)).clamp(spec.clamp.0, spec.clamp.1))?)
}

/// Baseline with the same L∞ budget: each pixel moves by noise drawn
/// uniformly from `[-ε, ε]`.
pub fn uniform_perturbation<R: Rng + ?Sized>(x: &Tensor, spec: &AttackSpec, rng: &mut R) -> Tensor {
    let mut out = x.clone();
    let eps = spec.epsilon;
    for v in out.data_mut() {
        let d = if eps > 0.0 { rng.random_range(-eps..=eps) } else { 0.0 };
        *v = (*v + d).clamp(spec.clamp.0, spec.clamp.1);
    }
    out
}
