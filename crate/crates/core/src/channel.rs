//! Latent-space channels between the semantic encoder and decoder.
//!
//! * AWGN: `y = s + n`, `n ~ N(0, σ² I)`.
//! * Rayleigh: `y = h ⊙ s + n`, with an independent fade per coordinate,
//!   `h ~ Rayleigh(1/√2)` so that `E[h²] = 1`. The receiver does not
//!   equalize.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nncore::{NnError, Tensor};
use crate::rng::{normal, SeedRng};
use crate::vae::{reparameterize, VaeError, VaeModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    pub sigma: f64,
}

impl ChannelSpec {
    pub fn awgn(sigma: f64) -> Self {
        Self { kind: ChannelKind::Awgn, sigma }
    }

    pub fn rayleigh(sigma: f64) -> Self {
        Self { kind: ChannelKind::Rayleigh, sigma }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.sigma >= 0.0 && self.sigma.is_finite() {
            Ok(())
        } else {
            Err(NnError::Config(format!("channel sigma must be ≥ 0, got {}", self.sigma)))
        }
    }

    pub fn apply(&self, s: &Tensor, rng: &mut SeedRng) -> Result<Tensor, NnError> {
        self.validate()?;
        let mut y = s.clone();
        for v in y.data_mut() {
            let fade = match self.kind {
                ChannelKind::Awgn => 1.0,
                ChannelKind::Rayleigh => rayleigh_fade(rng),
            };
            *v = fade * *v + self.sigma * normal(rng);
        }
        Ok(y)
    }
}

/// Rayleigh draw with scale `1/√2`: `sqrt(-ln U)`.
pub fn rayleigh_fade<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    (-u.ln()).sqrt()
}

/// Output of one pass over the semantic link, with both latent taps.
#[derive(Clone, Debug)]
pub struct Transmission {
    pub x_hat: Tensor,
    pub z_sent: Tensor,
    pub z_received: Tensor,
}

/// Encode, sample, send through `spec`, decode.
pub fn transmit(model: &VaeModel, x: &Tensor, spec: &ChannelSpec, rng: &mut SeedRng) -> Result<Transmission, VaeError> {
    let (mu, logvar) = model.encode(x)?;
    let z_sent = reparameterize(&mu, &logvar, rng)?;
    let z_received = spec.apply(&z_sent, rng)?;
    let x_hat = model.decode(&z_received)?;
    Ok(Transmission { x_hat, z_sent, z_received })
}
