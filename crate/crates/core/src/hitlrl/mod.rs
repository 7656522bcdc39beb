//! Feedback-driven retraining of the semantic codec.
//!
//! A DQN agent watches per-receiver reconstruction quality and picks how the
//! VAE is fine-tuned next: which digits to train on, how much latent noise,
//! which learning rate and how many epochs.

mod dqn;
mod env;

pub use dqn::{td_loss_and_gradients, DqnAgent, DqnConfig, ReplayBuffer};
pub use env::{run_loop, run_loop_with, BroadcastEnv, EnvConfig, History, Origin, Override, StepOutcome, StepRecord};

use serde::{Deserialize, Serialize};

use crate::nncore::NnError;
use crate::vae::VaeError;

pub const NUM_UES: usize = 5;
pub const STATE_DIM: usize = NUM_UES + 2;
pub const NUM_ACTIONS: usize = 32;
/// Channel noise std of each receiver.
pub const UE_SIGMAS: [f64; NUM_UES] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const SIGMA_GRID: [f64; 4] = [0.0, 0.1, 0.3, 0.5];
pub const LR_GRID: [f64; 2] = [1e-3, 1e-4];
pub const EPOCH_GRID: [usize; 2] = [1, 2];
/// Reward assigned to a step whose fine-tuning diverged.
pub const DIVERGENCE_REWARD: f64 = -10.0;

#[derive(Debug, thiserror::Error)]
pub enum HitlError {
    #[error("action index {0} outside [0, {NUM_ACTIONS})")]
    InvalidAction(usize),
    #[error("batch of {requested} requested from a buffer holding {occupancy}")]
    BufferTooSmall { requested: usize, occupancy: usize },
    #[error("invalid setting: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Vae(#[from] VaeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlState {
    pub mses: [f64; NUM_UES],
    pub sigma_train: f64,
    pub include_even: bool,
}

impl RlState {
    /// Network input: MSEs ×10, σ_train ×2, indicator as 0/1.
    pub fn features(&self) -> [f64; STATE_DIM] {
        let mut f = [0.0; STATE_DIM];
        for (o, m) in f.iter_mut().zip(&self.mses) {
            *o = m * 10.0;
        }
        f[NUM_UES] = self.sigma_train * 2.0;
        f[NUM_UES + 1] = if self.include_even { 1.0 } else { 0.0 };
        f
    }

    pub fn mean_mse(&self) -> f64 {
        self.mses.iter().sum::<f64>() / NUM_UES as f64
    }
}

/// Index into the 32-entry grid, laid out as
/// `((even·4 + σ)·2 + lr)·2 + epochs` with each factor indexing its grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct RlAction(usize);

impl RlAction {
    pub fn new(index: usize) -> Result<Self, HitlError> {
        if index < NUM_ACTIONS {
            Ok(Self(index))
        } else {
            Err(HitlError::InvalidAction(index))
        }
    }

    pub fn from_parts(
        include_even: bool,
        sigma_idx: usize,
        lr_idx: usize,
        epoch_idx: usize,
    ) -> Result<Self, HitlError> {
        if sigma_idx >= SIGMA_GRID.len() || lr_idx >= LR_GRID.len() || epoch_idx >= EPOCH_GRID.len() {
            return Err(HitlError::Config(format!("grid index out of range: ({sigma_idx}, {lr_idx}, {epoch_idx})")));
        }
        Self::new(((usize::from(include_even) * 4 + sigma_idx) * 2 + lr_idx) * 2 + epoch_idx)
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (0..NUM_ACTIONS).map(Self)
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn include_even(self) -> bool {
        self.0 >= 16
    }

    pub fn sigma_train(self) -> f64 {
        SIGMA_GRID[(self.0 / 4) % 4]
    }

    pub fn lr(self) -> f64 {
        LR_GRID[(self.0 / 2) % 2]
    }

    pub fn epochs(self) -> usize {
        EPOCH_GRID[self.0 % 2]
    }
}

impl TryFrom<usize> for RlAction {
    type Error = HitlError;
    fn try_from(v: usize) -> Result<Self, HitlError> {
        Self::new(v)
    }
}

impl From<RlAction> for usize {
    fn from(a: RlAction) -> usize {
        a.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlTransition {
    pub state: RlState,
    pub action: RlAction,
    pub reward: f64,
    pub next_state: RlState,
    pub terminal: bool,
}

/// `1 / (mean(mses) + ε) − α · train_loss`.
pub fn compute_reward(mses: &[f64], train_loss: f64, alpha: f64, epsilon: f64) -> f64 {
    let mean = mses.iter().sum::<f64>() / mses.len() as f64;
    1.0 / (mean + epsilon) - alpha * train_loss
}

/// Human feedback signal `f_h` fed into [`shape_reward`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Feedback {
    /// Negative mean MSE across receivers.
    #[default]
    NegMeanMse,
    Constant(f64),
}

impl Feedback {
    pub fn signal(&self, state: &RlState) -> f64 {
        match *self {
            Feedback::NegMeanMse => -state.mean_mse(),
            Feedback::Constant(c) => c,
        }
    }
}

/// `R + α · f_h`.
pub fn shape_reward(env_reward: f64, human_feedback: f64, alpha: f64) -> f64 {
    env_reward + alpha * human_feedback
}

/// Replaces the agent's action when a human supplies one.
pub fn apply_human_override(action: RlAction, over: Option<usize>) -> Result<RlAction, HitlError> {
    match over {
        None => Ok(action),
        Some(i) => RlAction::new(i),
    }
}
