use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use super::report::write_json;
use super::{at, io_err, obtain_vae, ExperimentConfig, ExperimentKind, HarnessError, HealthyData, Stage};
use crate::data::{filter_labels, is_odd};
use crate::hitlrl::{run_loop_with, BroadcastEnv, DqnAgent, History, NUM_UES};
use crate::rng::{fork, seeded};
use crate::vae::{write_history_csv, ElboBreakdown, VaeModel};

#[derive(Clone, Debug)]
pub struct HitlReport {
    pub seed: u64,
    pub history: History,
    pub phase1_history: Vec<ElboBreakdown>,
    /// Receiver-averaged MSE of the phase-1 model on even / odd digits.
    pub initial_even_mse: f64,
    pub initial_odd_mse: f64,
    pub initial_mses: [f64; NUM_UES],
    pub final_model: VaeModel,
    pub agent: DqnAgent,
}

impl HitlReport {
    fn window_mean(&self, last: bool) -> f64 {
        let m = &self.history.episode_means;
        let k = m.len().min(10);
        let slice = if last { &m[m.len() - k..] } else { &m[..k] };
        slice.iter().sum::<f64>() / k as f64
    }

    /// Mean episode reward over the first ten episodes (or all, if fewer).
    pub fn first_window_mean(&self) -> f64 {
        self.window_mean(false)
    }

    pub fn last_window_mean(&self) -> f64 {
        self.window_mean(true)
    }
}

#[derive(Serialize)]
struct HitlSummary {
    seed: u64,
    episodes: usize,
    steps: usize,
    mean_reward_first_10: f64,
    mean_reward_last_10: f64,
    final_greedy_action: usize,
    final_greedy_include_even: bool,
    final_greedy_sigma_train: f64,
    final_greedy_lr: f64,
    final_greedy_epochs: usize,
    human_steps: usize,
    diverged_steps: usize,
    initial_even_mse: f64,
    initial_odd_mse: f64,
    initial_mses: [f64; NUM_UES],
}

/// Phase 1 trains the codec on odd digits only; phase 2 runs the agent loop.
///
/// With `out` set and `rl.checkpoint_every = k`, agent and VAE checkpoints
/// are written after every `k`-th episode.
pub fn run_hitl(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<HitlReport, HarnessError> {
    if cfg.kind != ExperimentKind::HitlRl {
        return Err(HarnessError::Config(format!("{:?} is not the hitl-rl experiment", cfg.kind)));
    }
    let rl = &cfg.rl;
    let mut root = seeded(cfg.seed);
    let mut data_rng = fork(&mut root);
    let mut train_rng = fork(&mut root);
    let mut env_rng = fork(&mut root);
    let mut agent_rng = fork(&mut root);
    let mut loop_rng = fork(&mut root);

    let healthy = HealthyData::open(&cfg.data.healthy)?;
    let pool = healthy.train(cfg.data.train_count, &mut data_rng)?;
    let odd = filter_labels(&pool, is_odd).map_err(at(Stage::Data))?;
    let eval = healthy.balanced_test(rl.eval_count, &mut data_rng)?;
    let (model, phase1_history) = obtain_vae(cfg, &odd.images, 0.0, &mut train_rng)?;

    let mut env = BroadcastEnv::new(model, pool, &eval, rl.env.clone(), &mut env_rng).map_err(at(Stage::Rl))?;
    let (initial_even_mse, initial_odd_mse) = env.parity_mse();
    let initial_mses = env.initial_state().mses;
    let mut agent = DqnAgent::new(rl.dqn.clone(), &mut agent_rng).map_err(at(Stage::Rl))?;

    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let history = run_loop_with(
        &mut env,
        &mut agent,
        rl.episodes,
        rl.steps_per_episode,
        &rl.overrides,
        &mut loop_rng,
        |episode, env, agent| {
            if let (Some(dir), Some(k)) = (out, rl.checkpoint_every) {
                if (episode + 1) % k == 0 {
                    save_checkpoints(dir, &format!("_ep{}", episode + 1), env.model(), agent)
                        .map_err(|e| crate::hitlrl::HitlError::Config(e.to_string()))?;
                }
            }
            Ok(())
        },
    )
    .map_err(at(Stage::Rl))?;

    Ok(HitlReport {
        seed: cfg.seed,
        history,
        phase1_history,
        initial_even_mse,
        initial_odd_mse,
        initial_mses,
        final_model: env.model().clone(),
        agent,
    })
}

fn save_checkpoints(dir: &Path, suffix: &str, model: &VaeModel, agent: &DqnAgent) -> Result<(), HarnessError> {
    let vae = dir.join(format!("vae{suffix}.sgnn"));
    model.to_checkpoint().save(&vae).map_err(at(Stage::Report))?;
    let dqn = dir.join(format!("agent{suffix}.sgnn"));
    agent.to_checkpoint().save(&dqn).map_err(at(Stage::Report))
}

/// `history.csv`, `episodes.csv`, `phase1_history.csv`, `summary.json` and
/// the final checkpoints.
pub fn write_hitl_outputs(report: &HitlReport, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let h = &report.history;
    let path = dir.join("history.csv");
    h.write_csv(BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?)).map_err(io_err(&path))?;
    let path = dir.join("episodes.csv");
    h.write_episode_csv(BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?)).map_err(io_err(&path))?;
    if !report.phase1_history.is_empty() {
        let path = dir.join("phase1_history.csv");
        write_history_csv(&report.phase1_history, BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?))
            .map_err(io_err(&path))?;
    }
    let a = h.final_greedy;
    let summary = HitlSummary {
        seed: report.seed,
        episodes: h.episode_means.len(),
        steps: h.steps.len(),
        mean_reward_first_10: report.first_window_mean(),
        mean_reward_last_10: report.last_window_mean(),
        final_greedy_action: a.index(),
        final_greedy_include_even: a.include_even(),
        final_greedy_sigma_train: a.sigma_train(),
        final_greedy_lr: a.lr(),
        final_greedy_epochs: a.epochs(),
        human_steps: h.steps.iter().filter(|s| s.origin == crate::hitlrl::Origin::Human).count(),
        diverged_steps: h.steps.iter().filter(|s| s.diverged).count(),
        initial_even_mse: report.initial_even_mse,
        initial_odd_mse: report.initial_odd_mse,
        initial_mses: report.initial_mses,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    save_checkpoints(dir, "", &report.final_model, &report.agent)
}
