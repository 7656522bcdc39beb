//! JSON experiment configuration.
//!
//! Every section except `kind` and `seed` may be omitted. A minimal file:
//!
//! ```json
//! { "kind": "feature-change", "seed": 7 }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::adversary::AttackSpec;
use crate::channel::ChannelSpec;
use crate::gpdetect::LengthScale;
use crate::hitlrl::{DqnConfig, EnvConfig, Override};
use crate::vae::TrainConfig;

/// Environment variable consulted when a dataset path is not configured.
pub const DATA_DIR_ENV: &str = "SEMGUARD_DATA_DIR";
/// CIFAR-10 batch used when `ood.source` is `cifar` without an explicit path.
pub const DEFAULT_CIFAR_BATCH: &str = "cifar-10-batches-bin/data_batch_1.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FeatureChange,
    ChannelChange,
    Adversarial,
    HitlRl,
}

impl ExperimentKind {
    pub fn is_detection(self) -> bool {
        self != ExperimentKind::HitlRl
    }

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FeatureChange => "feature-change",
            ExperimentKind::ChannelChange => "channel-change",
            ExperimentKind::Adversarial => "adversarial",
            ExperimentKind::HitlRl => "hitl-rl",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub vae: VaeConfig,
    /// Healthy link. Defaults to AWGN σ=0.1, or σ=0.2 for channel-change.
    #[serde(default)]
    pub channel: Option<ChannelSpec>,
    /// Replacement link for channel-change. Defaults to Rayleigh at the
    /// healthy link's σ.
    #[serde(default)]
    pub faulty_channel: Option<ChannelSpec>,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub rl: RlConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HealthyConfig {
    /// Rendered digits; needs no files.
    #[default]
    Procedural,
    /// Decompressed MNIST IDX files in `dir`, or in `$SEMGUARD_DATA_DIR`.
    Mnist { dir: Option<PathBuf> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OodConfig {
    #[default]
    Synthetic,
    /// A CIFAR-10 binary batch; defaults to
    /// `$SEMGUARD_DATA_DIR/cifar-10-batches-bin/data_batch_1.bin`.
    Cifar { path: Option<PathBuf> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub healthy: HealthyConfig,
    pub ood: OodConfig,
    pub train_count: usize,
    pub calibration_count: usize,
    /// Healthy plus faulty test samples.
    pub test_count: usize,
    /// Share of the test set that is faulty.
    pub ood_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            healthy: HealthyConfig::default(),
            ood: OodConfig::default(),
            train_count: 2000,
            calibration_count: 400,
            test_count: 800,
            ood_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Latent training noise. When absent, detection experiments train with
    /// the healthy link's σ in the loop and the RL experiment with 0.
    pub sigma_train: Option<f64>,
    /// Load this checkpoint instead of training.
    pub checkpoint: Option<PathBuf>,
}

impl Default for VaeConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { lr: t.lr, epochs: t.epochs, batch_size: t.batch_size, sigma_train: None, checkpoint: None }
    }
}

impl VaeConfig {
    pub fn train_config(&self, default_sigma: f64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            sigma_train: self.sigma_train.unwrap_or(default_sigma),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdPolicy {
    /// `(1 - fpr)` quantile of calibration scores.
    TargetFpr(f64),
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub length_scale: LengthScale,
    pub jitter: f64,
    pub fit_points: usize,
    pub threshold: ThresholdPolicy,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            length_scale: LengthScale::default(),
            jitter: 1e-6,
            fit_points: 500,
            threshold: ThresholdPolicy::TargetFpr(0.05),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Size of the fixed broadcast batch; half of it is even digits.
    pub eval_count: usize,
    pub dqn: DqnConfig,
    pub env: EnvConfig,
    pub overrides: Vec<Override>,
    /// Write agent and VAE checkpoints after every this many episodes.
    pub checkpoint_every: Option<usize>,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            episodes: 30,
            steps_per_episode: 5,
            eval_count: 512,
            dqn: DqnConfig::default(),
            env: EnvConfig::default(),
            overrides: Vec::new(),
            checkpoint_every: None,
        }
    }
}

impl ExperimentConfig {
    /// Minimal config with defaults everywhere else.
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            output_dir: None,
            data: DataConfig::default(),
            vae: VaeConfig::default(),
            channel: None,
            faulty_channel: None,
            attack: AttackSpec::default(),
            gp: GpConfig::default(),
            rl: RlConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// `output_dir`, or `runs/<kind>-seed<seed>` when unset.
    pub fn output_dir_or_default(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-seed{}", self.kind.name(), self.seed)))
    }

    pub fn healthy_channel(&self) -> ChannelSpec {
        self.channel.unwrap_or(ChannelSpec::awgn(if self.kind == ExperimentKind::ChannelChange { 0.2 } else { 0.1 }))
    }

    pub fn faulty_link(&self) -> ChannelSpec {
        self.faulty_channel.unwrap_or(ChannelSpec::rayleigh(self.healthy_channel().sigma))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        let d = &self.data;
        if d.train_count < 2 || d.test_count < 2 {
            return err("data.train_count and data.test_count must be ≥ 2".into());
        }
        if !(d.ood_fraction > 0.0 && d.ood_fraction < 1.0) {
            return err(format!("data.ood_fraction must lie in (0,1), got {}", d.ood_fraction));
        }
        let v = &self.vae;
        if !(v.lr > 0.0) || v.epochs == 0 || v.batch_size == 0 || v.sigma_train.is_some_and(|s| !(s >= 0.0)) {
            return err("vae: need lr > 0, epochs ≥ 1, batch_size ≥ 1, sigma_train ≥ 0".into());
        }
        for (name, ch) in [("channel", self.channel), ("faulty_channel", self.faulty_channel)] {
            if let Some(c) = ch {
                c.validate().map_err(|e| HarnessError::Config(format!("{name}: {e}")))?;
            }
        }
        if !(self.attack.epsilon >= 0.0) || !(self.attack.clamp.0 < self.attack.clamp.1) {
            return err("attack: need epsilon ≥ 0 and clamp.0 < clamp.1".into());
        }
        let g = &self.gp;
        if g.fit_points < 2 || !(g.jitter >= 0.0) {
            return err("gp: need fit_points ≥ 2 and jitter ≥ 0".into());
        }
        match g.length_scale {
            LengthScale::Median(f) | LengthScale::Fixed(f) if !(f > 0.0 && f.is_finite()) => {
                return err(format!("gp.length_scale must be positive, got {f}"));
            }
            _ => {}
        }
        match g.threshold {
            ThresholdPolicy::TargetFpr(p) if !(p > 0.0 && p < 1.0) => {
                return err(format!("gp.threshold.target-fpr must lie in (0,1), got {p}"));
            }
            ThresholdPolicy::Fixed(t) if !(t > 0.0) => return err(format!("gp.threshold.fixed must be > 0, got {t}")),
            _ => {}
        }
        if self.kind.is_detection() && d.calibration_count < crate::gpdetect::MIN_CALIBRATION_SCORES {
            if let ThresholdPolicy::TargetFpr(_) = g.threshold {
                return err(format!(
                    "data.calibration_count must be ≥ {} to calibrate a threshold",
                    crate::gpdetect::MIN_CALIBRATION_SCORES
                ));
            }
        }
        let r = &self.rl;
        if r.episodes == 0 || r.steps_per_episode == 0 || r.eval_count < 2 {
            return err("rl: need episodes ≥ 1, steps_per_episode ≥ 1, eval_count ≥ 2".into());
        }
        r.dqn.validate().map_err(|e| HarnessError::Config(format!("rl.dqn: {e}")))?;
        r.env.validate().map_err(|e| HarnessError::Config(format!("rl.env: {e}")))?;
        for o in &r.overrides {
            if o.action >= crate::hitlrl::NUM_ACTIONS {
                return err(format!("rl.overrides: action {} outside the 32-action grid", o.action));
            }
        }
        if r.checkpoint_every == Some(0) {
            return err("rl.checkpoint_every must be ≥ 1".into());
        }
        Ok(())
    }
}

/// Directory named in the config, else `$SEMGUARD_DATA_DIR`.
pub(crate) fn data_dir(explicit: &Option<PathBuf>) -> Result<PathBuf, HarnessError> {
    if let Some(d) = explicit {
        return Ok(d.clone());
    }
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| HarnessError::Config(format!("no dataset directory configured and {DATA_DIR_ENV} is not set")))
}
