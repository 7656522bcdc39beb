//! Variational autoencoder used as the semantic encoder/decoder pair.
//!
//! Encoder: 784 → 400 (ReLU) → two 20-wide linear heads for the posterior
//! mean and log-variance. Decoder: 20 → 400 (ReLU) → 784 (sigmoid).
//!
//! The loss is the negative ELBO, averaged over the batch:
//!
//! ```text
//! recon = -Σ_pixels [x ln x̂ + (1-x) ln(1-x̂)]
//! kl    = -½ Σ_latent (1 + logvar - mu² - exp(logvar))
//! total = recon + kl
//! ```
//!
//! Gradients are derived by hand. Because the decoder ends in a sigmoid and
//! the reconstruction term is a Bernoulli log-likelihood, the gradient at
//! the decoder logits is simply `(x̂ - x) / B`.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::IMAGE_DIM;
use crate::nncore::{
    backward_pre, forward, Activation, AdamConfig, AdamState, Checkpoint, DenseLayer, ForwardTrace, LayerTrace, Mlp,
    NnError, Tensor,
};
use crate::rng::{normal, SeedRng};

pub const LATENT_DIM: usize = 20;
pub const HIDDEN_DIM: usize = 400;
/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before `ln`.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum VaeError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Parameters at the start of the failing epoch.
        last_good: Box<VaeModel>,
    },
    #[error("invalid training setup: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub encoder: DenseLayer,
    pub mu_head: DenseLayer,
    pub logvar_head: DenseLayer,
    pub decoder: Mlp,
}

/// Per-batch means, in nats.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

/// Noise draws held fixed so the loss becomes a deterministic function of
/// parameters and inputs.
#[derive(Clone, Debug)]
pub struct FrozenNoise {
    /// Standard-normal reparameterization noise, `B × 20`.
    pub latent: Tensor,
    /// Additive channel noise on the latent, already scaled, `B × 20`.
    pub channel: Option<Tensor>,
}

impl FrozenNoise {
    pub fn draw(batch: usize, channel_sigma: f64, rng: &mut SeedRng) -> Self {
        let latent = Tensor::from_fn(batch, LATENT_DIM, |_, _| normal(rng));
        let channel =
            (channel_sigma > 0.0).then(|| Tensor::from_fn(batch, LATENT_DIM, |_, _| channel_sigma * normal(rng)));
        Self { latent, channel }
    }

    /// No sampling noise at all: the latent is the posterior mean.
    pub fn none(batch: usize) -> Self {
        Self { latent: Tensor::zeros(&[batch, LATENT_DIM]), channel: None }
    }
}

#[derive(Clone, Debug)]
pub struct VaeGradients {
    /// Same order as [`VaeModel::params`].
    pub params: Vec<Tensor>,
    /// Gradient of the batch-mean loss w.r.t. the input pixels.
    pub input: Tensor,
}

impl VaeModel {
    pub fn new(rng: &mut SeedRng) -> Self {
        Self {
            encoder: DenseLayer::new(IMAGE_DIM, HIDDEN_DIM, Activation::Relu, rng),
            mu_head: DenseLayer::new(HIDDEN_DIM, LATENT_DIM, Activation::Identity, rng),
            logvar_head: DenseLayer::new(HIDDEN_DIM, LATENT_DIM, Activation::Identity, rng),
            decoder: Mlp::new(&[LATENT_DIM, HIDDEN_DIM, IMAGE_DIM], Activation::Relu, Activation::Sigmoid, rng),
        }
    }

    /// All weights and biases zero.
    pub fn zeros() -> Self {
        Self {
            encoder: DenseLayer::zeros(IMAGE_DIM, HIDDEN_DIM, Activation::Relu),
            mu_head: DenseLayer::zeros(HIDDEN_DIM, LATENT_DIM, Activation::Identity),
            logvar_head: DenseLayer::zeros(HIDDEN_DIM, LATENT_DIM, Activation::Identity),
            decoder: Mlp {
                layers: vec![
                    DenseLayer::zeros(LATENT_DIM, HIDDEN_DIM, Activation::Relu),
                    DenseLayer::zeros(HIDDEN_DIM, IMAGE_DIM, Activation::Sigmoid),
                ],
            },
        }
    }

    /// Returns `(mu, logvar)`, each `B × 20`.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor), VaeError> {
        let h = forward(std::slice::from_ref(&self.encoder), x)?;
        let h = h.output();
        Ok((self.mu_head.forward(h)?.1, self.logvar_head.forward(h)?.1))
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor, VaeError> {
        Ok(self.decoder.predict(z)?)
    }

    /// Decodes the posterior mean: the noise-free reconstruction.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor, VaeError> {
        let (mu, _) = self.encode(x)?;
        self.decode(&mu)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = vec![
            &self.encoder.weights,
            &self.encoder.bias,
            &self.mu_head.weights,
            &self.mu_head.bias,
            &self.logvar_head.weights,
            &self.logvar_head.bias,
        ];
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = vec![
            &mut self.encoder.weights,
            &mut self.encoder.bias,
            &mut self.mu_head.weights,
            &mut self.mu_head.bias,
            &mut self.logvar_head.weights,
            &mut self.logvar_head.bias,
        ];
        p.extend(self.decoder.params_mut());
        p
    }

    /// Copy of `self` with parameters replaced, in [`Self::params`] order.
    pub fn with_params(&self, params: &[Tensor]) -> Result<Self, VaeError> {
        let mut m = self.clone();
        let slots = m.params_mut();
        if slots.len() != params.len() {
            return Err(NnError::Shape(format!("{} parameter tensors, got {}", slots.len(), params.len())).into());
        }
        for (slot, p) in slots.into_iter().zip(params) {
            p.expect_same_shape(slot, "parameter")?;
            *slot = p.clone();
        }
        Ok(m)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        for (name, layer) in [("encoder", &self.encoder), ("mu", &self.mu_head), ("logvar", &self.logvar_head)] {
            Mlp { layers: vec![layer.clone()] }.save_into(name, &mut c);
        }
        self.decoder.save_into("decoder", &mut c);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, VaeError> {
        let single = |name: &str| -> Result<DenseLayer, VaeError> {
            let mut m = Mlp::load_from(name, c)?;
            if m.layers.len() != 1 {
                return Err(NnError::Checkpoint(format!("{name}: expected one layer")).into());
            }
            Ok(m.layers.remove(0))
        };
        let model = Self {
            encoder: single("encoder")?,
            mu_head: single("mu")?,
            logvar_head: single("logvar")?,
            decoder: Mlp::load_from("decoder", c)?,
        };
        let want: Vec<Vec<usize>> = Self::zeros().params().iter().map(|t| t.shape().to_vec()).collect();
        let got: Vec<Vec<usize>> = model.params().iter().map(|t| t.shape().to_vec()).collect();
        if want != got {
            return Err(NnError::Checkpoint("VAE checkpoint has unexpected layer widths".into()).into());
        }
        Ok(model)
    }
}

/// `z = mu + exp(½ logvar) ⊙ ε`, `ε ~ N(0, I)`.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, rng: &mut SeedRng) -> Result<Tensor, VaeError> {
    let eps = Tensor::from_fn(mu.rows(), mu.cols(), |_, _| normal(rng));
    reparameterize_with(mu, logvar, &eps)
}

pub fn reparameterize_with(mu: &Tensor, logvar: &Tensor, eps: &Tensor) -> Result<Tensor, VaeError> {
    mu.expect_same_shape(logvar, "reparameterize")?;
    mu.expect_same_shape(eps, "reparameterize noise")?;
    let data =
        mu.data().iter().zip(logvar.data()).zip(eps.data()).map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e).collect();
    Ok(Tensor::new(mu.shape().to_vec(), data)?)
}

pub fn elbo_loss(x: &Tensor, x_hat: &Tensor, mu: &Tensor, logvar: &Tensor) -> Result<ElboBreakdown, VaeError> {
    x.expect_same_shape(x_hat, "elbo reconstruction")?;
    mu.expect_same_shape(logvar, "elbo posterior")?;
    if x.rows() != mu.rows() {
        return Err(NnError::Shape(format!("{} images vs {} latents", x.rows(), mu.rows())).into());
    }
    let b = x.rows() as f64;
    let recon = x.data().iter().zip(x_hat.data()).map(|(&t, &p)| {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
    });
    let recon = neumaier_sum(recon) / b;
    let kl = -0.5 * neumaier_sum(mu.data().iter().zip(logvar.data()).map(|(&m, &lv)| 1.0 + lv - m * m - lv.exp())) / b;
    Ok(ElboBreakdown { reconstruction: recon, kl, total: recon + kl })
}

/// Compensated sum; keeps finite-difference checks of the batch loss above
/// the rounding floor.
fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Mean squared error over every pixel of every image.
pub fn reconstruction_mse(x: &Tensor, x_hat: &Tensor) -> f64 {
    assert_eq!(x.shape(), x_hat.shape(), "reconstruction_mse shapes");
    x.data().iter().zip(x_hat.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64
}

/// Per-image MSE, one value per row.
pub fn per_image_mse(x: &Tensor, x_hat: &Tensor) -> Vec<f64> {
    assert_eq!(x.shape(), x_hat.shape(), "per_image_mse shapes");
    x.iter_rows()
        .zip(x_hat.iter_rows())
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64)
        .collect()
}

struct Pass {
    enc: ForwardTrace,
    mu: Tensor,
    logvar: Tensor,
    dec: ForwardTrace,
}

fn forward_frozen(model: &VaeModel, x: &Tensor, noise: &FrozenNoise) -> Result<Pass, VaeError> {
    let enc = forward(std::slice::from_ref(&model.encoder), x)?;
    let h = enc.output();
    let mu = model.mu_head.forward(h)?.1;
    let logvar = model.logvar_head.forward(h)?.1;
    let mut z = reparameterize_with(&mu, &logvar, &noise.latent)?;
    if let Some(n) = &noise.channel {
        z = z.add(n)?;
    }
    let dec = model.decoder.forward(&z)?;
    Ok(Pass { enc, mu, logvar, dec })
}

/// Loss with the given noise held fixed.
pub fn frozen_loss(model: &VaeModel, x: &Tensor, noise: &FrozenNoise) -> Result<ElboBreakdown, VaeError> {
    let p = forward_frozen(model, x, noise)?;
    elbo_loss(x, p.dec.output(), &p.mu, &p.logvar)
}

/// Loss plus gradients w.r.t. every parameter and the input pixels.
pub fn loss_and_gradients(
    model: &VaeModel,
    x: &Tensor,
    noise: &FrozenNoise,
) -> Result<(ElboBreakdown, VaeGradients), VaeError> {
    let Pass { enc, mu, logvar, dec } = forward_frozen(model, x, noise)?;
    let x_hat = dec.output();
    let loss = elbo_loss(x, x_hat, &mu, &logvar)?;
    let inv_b = 1.0 / x.rows() as f64;

    let g_logits = x_hat.zip_map(x, |p, t| (p - t) * inv_b)?;
    let dec_grads = backward_pre(&model.decoder.layers, &dec, &g_logits)?;
    let dz = &dec_grads.input;

    let mut dmu = dz.clone();
    let mut dlv = dz.clone();
    {
        let (m, lv, e) = (mu.data(), logvar.data(), noise.latent.data());
        for (j, (gm, gl)) in dmu.data_mut().iter_mut().zip(dlv.data_mut()).enumerate() {
            let std = (0.5 * lv[j]).exp();
            *gm += m[j] * inv_b;
            *gl = *gl * e[j] * 0.5 * std + 0.5 * (lv[j].exp() - 1.0) * inv_b;
        }
    }
    let h = enc.output().clone();
    let head_trace = |out: &Tensor| ForwardTrace {
        input: h.clone(),
        layers: vec![LayerTrace { pre: out.clone(), post: out.clone() }],
    };
    let mu_grads = backward_pre(std::slice::from_ref(&model.mu_head), &head_trace(&mu), &dmu)?;
    let lv_grads = backward_pre(std::slice::from_ref(&model.logvar_head), &head_trace(&logvar), &dlv)?;

    let mut dh = mu_grads.input.add(&lv_grads.input)?;
    for (g, &pre) in dh.data_mut().iter_mut().zip(enc.layers[0].pre.data()) {
        if pre <= 0.0 {
            *g = 0.0;
        }
    }
    let enc_grads = backward_pre(std::slice::from_ref(&model.encoder), &enc, &dh)?;

    // d recon / dx = -logit(x̂) per pixel
    let logits = dec.output_pre();
    let mut dx = enc_grads.input;
    for (g, &a) in dx.data_mut().iter_mut().zip(logits.data()) {
        *g -= a * inv_b;
    }

    let mut params = vec![
        enc_grads.layers[0].weights.clone(),
        enc_grads.layers[0].bias.clone(),
        mu_grads.layers[0].weights.clone(),
        mu_grads.layers[0].bias.clone(),
        lv_grads.layers[0].weights.clone(),
        lv_grads.layers[0].bias.clone(),
    ];
    params.extend(dec_grads.flat().into_iter().cloned());
    Ok((loss, VaeGradients { params, input: dx }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Std of AWGN applied to the latent between sampling and decoding.
    pub sigma_train: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, epochs: 5, batch_size: 128, sigma_train: 0.0 }
    }
}

/// Fresh model trained on `images`; returns the per-epoch mean losses.
pub fn train_vae(
    images: &Tensor,
    cfg: &TrainConfig,
    rng: &mut SeedRng,
) -> Result<(VaeModel, Vec<ElboBreakdown>), VaeError> {
    let mut model = VaeModel::new(rng);
    let history = fine_tune(&mut model, images, cfg, rng)?;
    Ok((model, history))
}

/// Continues training `model` in place with a fresh optimizer.
///
/// On divergence the model is left at its last finite parameters and the
/// same snapshot is returned inside the error.
pub fn fine_tune(
    model: &mut VaeModel,
    images: &Tensor,
    cfg: &TrainConfig,
    rng: &mut SeedRng,
) -> Result<Vec<ElboBreakdown>, VaeError> {
    if images.rank() != 2 || images.cols() != IMAGE_DIM || images.rows() == 0 {
        return Err(VaeError::Config(format!("training images must be N×{IMAGE_DIM}, got {:?}", images.shape())));
    }
    if !(cfg.sigma_train >= 0.0) || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(VaeError::Config(format!("bad training config {cfg:?}")));
    }
    let n = images.rows();
    let mut adam = AdamState::new(&model.params(), AdamConfig::default());
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let snapshot = model.clone();
        order.shuffle(rng);
        let mut acc = ElboBreakdown::default();
        for chunk in order.chunks(cfg.batch_size) {
            let x = images.select_rows(chunk)?;
            let noise = FrozenNoise::draw(chunk.len(), cfg.sigma_train, rng);
            let (loss, grads) = loss_and_gradients(model, &x, &noise)?;
            let diverged = |reason: String, model: &mut VaeModel| {
                *model = snapshot.clone();
                VaeError::Diverged { epoch, reason, last_good: Box::new(snapshot.clone()) }
            };
            if !loss.total.is_finite() {
                return Err(diverged(format!("loss {}", loss.total), model));
            }
            let grad_refs: Vec<&Tensor> = grads.params.iter().collect();
            if let Err(e) = adam.step(&mut model.params_mut(), &grad_refs, cfg.lr) {
                return Err(diverged(e.to_string(), model));
            }
            let w = chunk.len() as f64 / n as f64;
            acc.reconstruction += loss.reconstruction * w;
            acc.kl += loss.kl * w;
            acc.total += loss.total * w;
        }
        history.push(acc);
    }
    Ok(history)
}

/// `epoch,recon,kl,total` with a header row; epochs count from 1.
pub fn write_history_csv<W: Write>(history: &[ElboBreakdown], mut w: W) -> io::Result<()> {
    writeln!(w, "epoch,recon,kl,total")?;
    for (i, h) in history.iter().enumerate() {
        writeln!(w, "{},{},{},{}", i + 1, h.reconstruction, h.kl, h.total)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::GradCheck;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn images(n: usize, seed: u64) -> Tensor {
        crate::data::procedural_digits(n, &mut seeded(seed)).unwrap().images
    }

    #[test]
    fn zero_model_encodes_to_mu_bias_and_decodes_to_half() {
        let mut m = VaeModel::zeros();
        m.mu_head.bias = Tensor::vector((0..20).map(|i| i as f64 * 0.1).collect()).unwrap();
        let (mu, lv) = m.encode(&Tensor::zeros(&[2, 784])).unwrap();
        assert_eq!(mu.row(1), m.mu_head.bias.data());
        assert!(lv.data().iter().all(|&v| v == 0.0));
        let x_hat = m.decode(&Tensor::filled(&[3, 20], 0.7)).unwrap();
        assert!(x_hat.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn encode_is_deterministic() {
        let m = VaeModel::new(&mut seeded(3));
        let x = images(4, 1);
        assert_eq!(m.encode(&x).unwrap().0, m.encode(&x).unwrap().0);
        let z = Tensor::filled(&[2, 20], 0.3);
        assert_eq!(m.decode(&z).unwrap(), m.decode(&z).unwrap());
    }

    #[test]
    fn wrong_width_is_a_shape_error() {
        let m = VaeModel::zeros();
        assert!(m.encode(&Tensor::zeros(&[1, 783])).is_err());
        assert!(m.decode(&Tensor::zeros(&[1, 19])).is_err());
    }

    #[test]
    fn collapsed_variance_returns_mean() {
        let mu = Tensor::from_fn(3, 20, |r, c| (r * 20 + c) as f64 * 0.01);
        let lv = Tensor::filled(&[3, 20], -50.0);
        let z = reparameterize(&mu, &lv, &mut seeded(0)).unwrap();
        for (a, b) in z.data().iter().zip(mu.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let again = reparameterize(&mu, &Tensor::zeros(&[3, 20]), &mut seeded(7)).unwrap();
        assert_eq!(again, reparameterize(&mu, &Tensor::zeros(&[3, 20]), &mut seeded(7)).unwrap());
    }

    #[test]
    fn standard_normal_moments() {
        let n = 10_000;
        let z = reparameterize(&Tensor::zeros(&[n, 20]), &Tensor::zeros(&[n, 20]), &mut seeded(11)).unwrap();
        for c in 0..20 {
            let col: Vec<f64> = (0..n).map(|r| z.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 0.05, "col {c} mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "col {c} var {var}");
        }
    }

    #[test]
    fn elbo_closed_forms() {
        let zeros = Tensor::zeros(&[1, 20]);
        let half = Tensor::filled(&[1, 784], 0.5);
        let l = elbo_loss(&half, &half, &zeros, &zeros).unwrap();
        assert_eq!(l.kl, 0.0);
        assert!((l.reconstruction - 784.0 * 2f64.ln()).abs() < 1e-9);
        let mut mu = zeros.clone();
        mu.data_mut()[0] = 1.0;
        assert!((elbo_loss(&half, &half, &mu, &zeros).unwrap().kl - 0.5).abs() < 1e-15);
    }

    #[test]
    fn saturated_outputs_are_clamped() {
        let x = Tensor::zeros(&[1, 784]);
        let x_hat = Tensor::filled(&[1, 784], 1.0);
        let l = elbo_loss(&x, &x_hat, &Tensor::zeros(&[1, 20]), &Tensor::zeros(&[1, 20])).unwrap();
        assert!(l.reconstruction.is_finite());
        assert!((l.reconstruction - -784.0 * PROB_CLAMP.ln()).abs() < 1e-6);
    }

    #[test]
    fn mse_closed_forms() {
        let z = Tensor::zeros(&[2, 784]);
        assert_eq!(reconstruction_mse(&z, &z), 0.0);
        assert_eq!(reconstruction_mse(&z, &Tensor::filled(&[2, 784], 1.0)), 1.0);
        assert_eq!(reconstruction_mse(&z, &Tensor::filled(&[2, 784], 0.5)), 0.25);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(21);
        let model = VaeModel::new(&mut rng);
        let x = images(8, 4);
        let noise = FrozenNoise::draw(8, 0.2, &mut rng);
        let (_, grads) = loss_and_gradients(&model, &x, &noise).unwrap();
        let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
        let report = GradCheck::sampled(12, 5).run(
            |p| frozen_loss(&model.with_params(p).unwrap(), &x, &noise).unwrap().total,
            &params,
            &grads.params,
        );
        assert!(report.passed(1e-4), "{report:?}");

        let input = GradCheck::sampled(60, 6).run(
            |p| frozen_loss(&model, &p[0], &noise).unwrap().total,
            std::slice::from_ref(&x),
            std::slice::from_ref(&grads.input),
        );
        assert!(input.passed(1e-4), "{input:?}");
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let x = images(16, 2);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let (m, h) = train_vae(&x, &cfg, &mut seeded(8)).unwrap();
        assert!(h.is_empty());
        assert_eq!(m, VaeModel::new(&mut seeded(8)));
    }

    #[test]
    fn training_is_seed_deterministic_and_learns() {
        let x = images(256, 3);
        let cfg = TrainConfig { epochs: 3, batch_size: 64, sigma_train: 0.1, ..TrainConfig::default() };
        let (a, ha) = train_vae(&x, &cfg, &mut seeded(1)).unwrap();
        let (b, hb) = train_vae(&x, &cfg, &mut seeded(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha[2].total < ha[0].total, "{ha:?}");
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = VaeModel::new(&mut seeded(4));
        let c = Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap();
        assert_eq!(VaeModel::from_checkpoint(&c).unwrap(), m);
    }

    #[test]
    fn history_csv_format() {
        let mut out = Vec::new();
        let h = [ElboBreakdown { reconstruction: 1.5, kl: 0.25, total: 1.75 }];
        write_history_csv(&h, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,recon,kl,total\n1,1.5,0.25,1.75\n");
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(mu in prop::collection::vec(-5.0f64..5.0, 20), lv in prop::collection::vec(-8.0f64..4.0, 20)) {
            let mu = Tensor::matrix(1, 20, mu).unwrap();
            let lv = Tensor::matrix(1, 20, lv).unwrap();
            let x = Tensor::filled(&[1, 784], 0.3);
            prop_assert!(elbo_loss(&x, &x, &mu, &lv).unwrap().kl >= 0.0);
        }
    }
}
