use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{
    apply_human_override, compute_reward, shape_reward, DqnAgent, Feedback, HitlError, RlAction, RlState, RlTransition,
    DIVERGENCE_REWARD, NUM_UES, UE_SIGMAS,
};
use crate::channel::{transmit, ChannelSpec};
use crate::data::{is_even, ImageDataset};
use crate::nncore::Tensor;
use crate::rng::{fork, SeedRng};
use crate::vae::{fine_tune, per_image_mse, ElboBreakdown, TrainConfig, VaeError, VaeModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub ue_sigmas: [f64; NUM_UES],
    /// Images drawn from the training pool for each fine-tuning step.
    pub fine_tune_size: usize,
    pub fine_tune_batch: usize,
    pub reward_alpha: f64,
    pub reward_epsilon: f64,
    /// Applied to the fine-tune loss before it is weighted by `reward_alpha`.
    pub loss_scale: f64,
    pub feedback: Feedback,
    pub feedback_weight: f64,
    /// Restore the initial VAE at the start of every episode.
    pub reset_each_episode: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            ue_sigmas: UE_SIGMAS,
            fine_tune_size: 640,
            fine_tune_batch: 32,
            reward_alpha: 0.1,
            reward_epsilon: 1e-6,
            loss_scale: 1e-3,
            feedback: Feedback::default(),
            feedback_weight: 0.0,
            reset_each_episode: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), HitlError> {
        if self.ue_sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(HitlError::Config("UE sigmas must be ≥ 0".into()));
        }
        if self.fine_tune_size == 0 || self.fine_tune_batch == 0 {
            return Err(HitlError::Config("fine_tune_size and fine_tune_batch must be positive".into()));
        }
        if !(self.reward_epsilon > 0.0) || !(self.feedback_weight >= 0.0) {
            return Err(HitlError::Config("reward_epsilon must be > 0 and feedback_weight ≥ 0".into()));
        }
        Ok(())
    }
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: RlState,
    /// Shaped reward, the one the agent learns from.
    pub reward: f64,
    pub env_reward: f64,
    /// Mean losses of the last fine-tuning epoch.
    pub train_loss: ElboBreakdown,
    pub diverged: bool,
    /// Mean over receivers of the MSE on even / odd evaluation digits.
    pub even_mse: f64,
    pub odd_mse: f64,
}

/// Five receivers sharing one semantic encoder, each behind its own AWGN link.
#[derive(Clone, Debug)]
pub struct BroadcastEnv {
    model: VaeModel,
    initial_model: VaeModel,
    pool: ImageDataset,
    odd_pool: Vec<usize>,
    eval: Tensor,
    eval_even: Vec<bool>,
    channels: Vec<ChannelSpec>,
    config: EnvConfig,
    state: RlState,
    initial_state: RlState,
    parity: (f64, f64),
    initial_parity: (f64, f64),
}

#[derive(Clone, Debug)]
struct Evaluation {
    mses: [f64; NUM_UES],
    even: f64,
    odd: f64,
}

impl BroadcastEnv {
    /// `pool` supplies fine-tuning images (all digits); `eval` is the fixed
    /// broadcast batch.
    pub fn new(
        model: VaeModel,
        pool: ImageDataset,
        eval: &ImageDataset,
        config: EnvConfig,
        rng: &mut SeedRng,
    ) -> Result<Self, HitlError> {
        config.validate()?;
        let odd_pool: Vec<usize> = (0..pool.len()).filter(|&i| !is_even(pool.labels[i])).collect();
        if odd_pool.is_empty() || odd_pool.len() == pool.len() {
            return Err(HitlError::Config("training pool needs both odd and even digits".into()));
        }
        let eval_even: Vec<bool> = eval.labels.iter().map(|&l| is_even(l)).collect();
        if !eval_even.iter().any(|&e| e) || eval_even.iter().all(|&e| e) {
            return Err(HitlError::Config("evaluation batch needs both odd and even digits".into()));
        }
        let channels = config.ue_sigmas.iter().map(|&s| ChannelSpec::awgn(s)).collect();
        let mut env = Self {
            initial_model: model.clone(),
            model,
            pool,
            odd_pool,
            eval: eval.images.clone(),
            eval_even,
            channels,
            config,
            state: RlState { mses: [0.0; NUM_UES], sigma_train: 0.0, include_even: false },
            initial_state: RlState { mses: [0.0; NUM_UES], sigma_train: 0.0, include_even: false },
            parity: (0.0, 0.0),
            initial_parity: (0.0, 0.0),
        };
        let e = env.evaluate(&env.model, rng)?;
        env.state.mses = e.mses;
        env.initial_state = env.state;
        env.parity = (e.even, e.odd);
        env.initial_parity = env.parity;
        Ok(env)
    }

    pub fn state(&self) -> &RlState {
        &self.state
    }

    pub fn initial_state(&self) -> &RlState {
        &self.initial_state
    }

    pub fn model(&self) -> &VaeModel {
        &self.model
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// `(even, odd)` evaluation MSE of the current model, averaged over receivers.
    pub fn parity_mse(&self) -> (f64, f64) {
        self.parity
    }

    pub fn reset(&mut self) {
        self.model = self.initial_model.clone();
        self.state = self.initial_state;
        self.parity = self.initial_parity;
    }

    fn evaluate(&self, model: &VaeModel, rng: &mut SeedRng) -> Result<Evaluation, HitlError> {
        let mut mses = [0.0; NUM_UES];
        let (mut even, mut odd) = (0.0, 0.0);
        let n_even = self.eval_even.iter().filter(|&&e| e).count() as f64;
        let n_odd = self.eval_even.len() as f64 - n_even;
        for (slot, spec) in mses.iter_mut().zip(&self.channels) {
            let mut ue_rng = fork(rng);
            let t = transmit(model, &self.eval, spec, &mut ue_rng)?;
            let per = per_image_mse(&self.eval, &t.x_hat);
            *slot = per.iter().sum::<f64>() / per.len() as f64;
            for (m, &e) in per.iter().zip(&self.eval_even) {
                if e {
                    even += m / n_even / NUM_UES as f64;
                } else {
                    odd += m / n_odd / NUM_UES as f64;
                }
            }
        }
        Ok(Evaluation { mses, even, odd })
    }

    pub fn step(&mut self, action: RlAction, rng: &mut SeedRng) -> Result<StepOutcome, HitlError> {
        let selection = if action.include_even() {
            rand::seq::index::sample(rng, self.pool.len(), self.config.fine_tune_size.min(self.pool.len())).into_vec()
        } else {
            let k = self.config.fine_tune_size.min(self.odd_pool.len());
            rand::seq::index::sample(rng, self.odd_pool.len(), k).into_iter().map(|i| self.odd_pool[i]).collect()
        };
        let images = self.pool.images.select_rows(&selection)?;
        let cfg = TrainConfig {
            lr: action.lr(),
            epochs: action.epochs(),
            batch_size: self.config.fine_tune_batch,
            sigma_train: action.sigma_train(),
        };
        let prior = self.model.clone();
        let history = match fine_tune(&mut self.model, &images, &cfg, rng) {
            Ok(h) => h,
            Err(VaeError::Diverged { .. }) => {
                self.model = prior;
                return Ok(StepOutcome {
                    next_state: self.state,
                    reward: DIVERGENCE_REWARD,
                    env_reward: DIVERGENCE_REWARD,
                    train_loss: ElboBreakdown { reconstruction: f64::NAN, kl: f64::NAN, total: f64::NAN },
                    diverged: true,
                    even_mse: self.parity.0,
                    odd_mse: self.parity.1,
                });
            }
            Err(e) => return Err(e.into()),
        };
        let train_loss = *history.last().expect("epochs ≥ 1");
        let e = self.evaluate(&self.model, rng)?;
        let next_state =
            RlState { mses: e.mses, sigma_train: action.sigma_train(), include_even: action.include_even() };
        let env_reward = compute_reward(
            &e.mses,
            train_loss.total * self.config.loss_scale,
            self.config.reward_alpha,
            self.config.reward_epsilon,
        );
        let reward = shape_reward(env_reward, self.config.feedback.signal(&next_state), self.config.feedback_weight);
        self.state = next_state;
        self.parity = (e.even, e.odd);
        Ok(StepOutcome {
            next_state,
            reward,
            env_reward,
            train_loss,
            diverged: false,
            even_mse: e.even,
            odd_mse: e.odd,
        })
    }
}

/// Who chose the executed action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Agent,
    Human,
}

/// Scripted human intervention; episodes and steps count from 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Override {
    pub episode: usize,
    pub step: usize,
    pub action: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub action: RlAction,
    pub origin: Origin,
    pub explored: bool,
    pub epsilon: f64,
    pub reward: f64,
    pub env_reward: f64,
    pub train_loss: f64,
    pub diverged: bool,
    pub mses: [f64; NUM_UES],
    pub even_mse: f64,
    pub odd_mse: f64,
    pub td_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub steps: Vec<StepRecord>,
    pub episode_means: Vec<f64>,
    /// Greedy action of the final agent at the episodes' starting state.
    pub final_greedy: RlAction,
}

impl History {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// One row per step; reproducible to the byte under a fixed seed.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "episode,step,action,include_even,sigma_train,lr,epochs,origin,epsilon,reward,env_reward,train_loss,\
             mse_1,mse_2,mse_3,mse_4,mse_5,even_mse,odd_mse,td_loss"
        )?;
        for r in &self.steps {
            let a = r.action;
            write!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.episode,
                r.step,
                a.index(),
                u8::from(a.include_even()),
                a.sigma_train(),
                a.lr(),
                a.epochs(),
                if r.origin == Origin::Human { "human" } else { "agent" },
                r.epsilon,
                r.reward,
                r.env_reward,
                r.train_loss
            )?;
            for m in r.mses {
                write!(w, ",{m}")?;
            }
            let td = r.td_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, ",{},{},{td}", r.even_mse, r.odd_mse)?;
        }
        Ok(())
    }

    pub fn write_episode_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "episode,mean_reward")?;
        for (i, m) in self.episode_means.iter().enumerate() {
            writeln!(w, "{i},{m}")?;
        }
        Ok(())
    }
}

fn epsilon_at(t: usize, total: usize, start: f64, end: f64) -> f64 {
    let half = (total / 2).max(1) as f64;
    start - (start - end) * (t as f64 / half).min(1.0)
}

/// Interleaves acting, fine-tuning and DQN updates for `episodes × steps`.
pub fn run_loop(
    env: &mut BroadcastEnv,
    agent: &mut DqnAgent,
    episodes: usize,
    steps_per_episode: usize,
    overrides: &[Override],
    rng: &mut SeedRng,
) -> Result<History, HitlError> {
    run_loop_with(env, agent, episodes, steps_per_episode, overrides, rng, |_, _, _| Ok(()))
}

/// [`run_loop`] with a callback after every finished episode (0-based index).
pub fn run_loop_with<F>(
    env: &mut BroadcastEnv,
    agent: &mut DqnAgent,
    episodes: usize,
    steps_per_episode: usize,
    overrides: &[Override],
    rng: &mut SeedRng,
    mut after_episode: F,
) -> Result<History, HitlError>
where
    F: FnMut(usize, &BroadcastEnv, &DqnAgent) -> Result<(), HitlError>,
{
    if episodes == 0 || steps_per_episode == 0 {
        return Err(HitlError::Config("episodes and steps_per_episode must be ≥ 1".into()));
    }
    for o in overrides {
        RlAction::new(o.action)?;
    }
    let total = episodes * steps_per_episode;
    let (start, end) = (agent.config().epsilon_start, agent.config().epsilon_end);
    let mut steps = Vec::with_capacity(total);
    let mut episode_means = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        if episode > 0 && env.config().reset_each_episode {
            env.reset();
        }
        let mut sum = 0.0;
        for step in 0..steps_per_episode {
            agent.epsilon = epsilon_at(episode * steps_per_episode + step, total, start, end);
            let state = *env.state();
            let (proposed, explored) = agent.select_action(&state, rng)?;
            let scripted = overrides.iter().find(|o| o.episode == episode && o.step == step).map(|o| o.action);
            let action = apply_human_override(proposed, scripted)?;
            let out = env.step(action, rng)?;
            agent.remember(RlTransition {
                state,
                action,
                reward: out.reward,
                next_state: out.next_state,
                terminal: step + 1 == steps_per_episode,
            });
            let mut td_loss = None;
            for _ in 0..agent.config().updates_per_step {
                td_loss = agent.learn(rng)?.or(td_loss);
            }
            sum += out.reward;
            steps.push(StepRecord {
                episode,
                step,
                action,
                origin: if scripted.is_some() { Origin::Human } else { Origin::Agent },
                explored: explored && scripted.is_none(),
                epsilon: agent.epsilon,
                reward: out.reward,
                env_reward: out.env_reward,
                train_loss: out.train_loss.total,
                diverged: out.diverged,
                mses: out.next_state.mses,
                even_mse: out.even_mse,
                odd_mse: out.odd_mse,
                td_loss,
            });
        }
        episode_means.push(sum / steps_per_episode as f64);
        after_episode(episode, env, agent)?;
    }
    let final_greedy = agent.greedy(env.initial_state())?;
    Ok(History { steps, episode_means, final_greedy })
}
