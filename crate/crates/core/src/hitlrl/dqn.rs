use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{HitlError, RlAction, RlState, RlTransition, NUM_ACTIONS, STATE_DIM};
use crate::nncore::{Activation, AdamConfig, AdamState, Checkpoint, Gradients, Mlp, Tensor};
use crate::rng::SeedRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Target network is copied from the online one every this many updates.
    pub target_sync: usize,
    /// Adam step size; 0 freezes the networks.
    pub lr: f64,
    /// Multiplies rewards inside the TD target so Q-values stay O(1).
    pub reward_scale: f64,
    pub updates_per_step: usize,
    /// Subtract the running mean of all observed rewards inside the TD target.
    pub center_rewards: bool,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            gamma: 0.9,
            buffer_capacity: 1000,
            batch_size: 32,
            target_sync: 10,
            lr: 1e-3,
            reward_scale: 0.1,
            updates_per_step: 4,
            center_rewards: true,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), HitlError> {
        let bad = |m: &str| Err(HitlError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0,1]");
        }
        if self.buffer_capacity == 0 || self.batch_size == 0 || self.target_sync == 0 {
            return bad("buffer_capacity, batch_size and target_sync must be positive");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() || !(self.reward_scale > 0.0) {
            return bad("lr must be ≥ 0 and reward_scale > 0");
        }
        if !(0.0 <= self.epsilon_end && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return bad("need 0 ≤ epsilon_end ≤ epsilon_start ≤ 1");
        }
        Ok(())
    }
}

/// FIFO experience store: pushing onto a full buffer drops the oldest entry.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<RlTransition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, t: RlTransition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &RlTransition> {
        self.items.iter()
    }

    /// Uniform sample without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<RlTransition>, HitlError> {
        if count > self.items.len() {
            return Err(HitlError::BufferTooSmall { requested: count, occupancy: self.items.len() });
        }
        let mut idx = rand::seq::index::sample(rng, self.items.len(), count).into_vec();
        idx.sort_unstable();
        Ok(idx.into_iter().map(|i| self.items[i]).collect())
    }
}

fn state_batch<'a>(states: impl Iterator<Item = &'a RlState>) -> Tensor {
    let data: Vec<f64> = states.flat_map(|s| s.features()).collect();
    let n = data.len() / STATE_DIM;
    Tensor::from_parts(vec![n, STATE_DIM], data)
}

fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Mean squared TD error of `online` on `batch` and its parameter gradients.
///
/// Target: `y = scale·r + γ·max_a Q_target(s', a)`, or `scale·r` on terminal
/// transitions.
pub fn td_loss_and_gradients(
    online: &Mlp,
    target: &Mlp,
    batch: &[RlTransition],
    gamma: f64,
    reward_scale: f64,
) -> Result<(f64, Gradients), HitlError> {
    if batch.is_empty() {
        return Err(HitlError::Config("empty TD batch".into()));
    }
    let b = batch.len();
    let next_q = target.predict(&state_batch(batch.iter().map(|t| &t.next_state)))?;
    let trace = online.forward(&state_batch(batch.iter().map(|t| &t.state)))?;
    let q = trace.output();
    let mut upstream = Tensor::zeros(&[b, NUM_ACTIONS]);
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let mut y = reward_scale * t.reward;
        if !t.terminal {
            y += gamma * next_q.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        let a = t.action.index();
        let d = q.get(i, a) - y;
        loss += d * d / b as f64;
        upstream.row_mut(i)[a] = 2.0 * d / b as f64;
    }
    let grads = online.backward(&trace, &upstream)?;
    Ok((loss, grads))
}

#[derive(Clone, Debug)]
pub struct DqnAgent {
    pub online: Mlp,
    pub target: Mlp,
    pub buffer: ReplayBuffer,
    pub epsilon: f64,
    config: DqnConfig,
    adam: AdamState,
    updates: u64,
    reward_sum: f64,
    rewards_seen: u64,
}

impl DqnAgent {
    pub fn new(config: DqnConfig, rng: &mut SeedRng) -> Result<Self, HitlError> {
        config.validate()?;
        let mut widths = vec![STATE_DIM];
        widths.extend(&config.hidden);
        widths.push(NUM_ACTIONS);
        let mut online = Mlp::new(&widths, Activation::Relu, Activation::Identity, rng);
        // Heads start at Q = 0, which with centered rewards is the value of
        // an average action.
        let head = online.layers.last_mut().expect("output layer");
        head.weights.data_mut().fill(0.0);
        head.bias.data_mut().fill(0.0);
        let adam = AdamState::new(&online.params(), AdamConfig::default());
        Ok(Self {
            target: online.clone(),
            online,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            epsilon: config.epsilon_start,
            config,
            adam,
            updates: 0,
            reward_sum: 0.0,
            rewards_seen: 0,
        })
    }

    pub fn config(&self) -> &DqnConfig {
        &self.config
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Stores a transition and folds its reward into the running mean.
    pub fn remember(&mut self, t: RlTransition) {
        self.reward_sum += t.reward;
        self.rewards_seen += 1;
        self.buffer.push(t);
    }

    /// Offset subtracted from rewards in TD targets.
    pub fn reward_baseline(&self) -> f64 {
        if self.config.center_rewards && self.rewards_seen > 0 {
            self.reward_sum / self.rewards_seen as f64
        } else {
            0.0
        }
    }

    pub fn q_values(&self, state: &RlState) -> Result<Vec<f64>, HitlError> {
        Ok(self.online.predict(&state_batch(std::iter::once(state)))?.into_data())
    }

    /// Argmax of Q; the lowest index wins ties.
    pub fn greedy(&self, state: &RlState) -> Result<RlAction, HitlError> {
        RlAction::new(argmax(&self.q_values(state)?))
    }

    /// ε-greedy choice. Returns the action and whether it was exploratory.
    pub fn select_action(&self, state: &RlState, rng: &mut SeedRng) -> Result<(RlAction, bool), HitlError> {
        if rng.random::<f64>() < self.epsilon {
            return Ok((RlAction::new(rng.random_range(0..NUM_ACTIONS))?, true));
        }
        Ok((self.greedy(state)?, false))
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// One TD step on `batch`; returns the loss before the step.
    pub fn dqn_update(&mut self, batch: &[RlTransition]) -> Result<f64, HitlError> {
        let baseline = self.reward_baseline();
        let centered: Vec<RlTransition> =
            batch.iter().map(|t| RlTransition { reward: t.reward - baseline, ..*t }).collect();
        let (loss, grads) =
            td_loss_and_gradients(&self.online, &self.target, &centered, self.config.gamma, self.config.reward_scale)?;
        if self.config.lr > 0.0 {
            let g = grads.flat();
            self.adam.step(&mut self.online.params_mut(), &g, self.config.lr)?;
        }
        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_sync as u64) {
            self.sync_target();
        }
        Ok(loss)
    }

    /// Samples a batch from the buffer and updates, once enough is stored.
    pub fn learn(&mut self, rng: &mut SeedRng) -> Result<Option<f64>, HitlError> {
        if self.buffer.len() < self.config.batch_size {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.config.batch_size, rng)?;
        self.dqn_update(&batch).map(Some)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        self.online.save_into("online", &mut c);
        self.target.save_into("target", &mut c);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::GradCheck;
    use crate::rng::seeded;

    fn state(seed: u64) -> RlState {
        let mut rng = seeded(seed);
        RlState {
            mses: std::array::from_fn(|_| rng.random_range(0.01..0.1)),
            sigma_train: [0.0, 0.1, 0.3, 0.5][rng.random_range(0..4)],
            include_even: rng.random(),
        }
    }

    fn transition(seed: u64, terminal: bool) -> RlTransition {
        RlTransition {
            state: state(seed),
            action: RlAction::new((seed as usize * 7) % NUM_ACTIONS).unwrap(),
            reward: 10.0 + seed as f64,
            next_state: state(seed + 100),
            terminal,
        }
    }

    fn random_net(seed: u64) -> Mlp {
        Mlp::new(&[STATE_DIM, 64, 64, NUM_ACTIONS], Activation::Relu, Activation::Identity, &mut seeded(seed))
    }

    fn agent(cfg: DqnConfig, seed: u64) -> DqnAgent {
        DqnAgent::new(cfg, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn uniform_exploration() {
        let a = agent(DqnConfig::default(), 0);
        let mut rng = seeded(1);
        let mut counts = [0usize; NUM_ACTIONS];
        let s = state(0);
        for _ in 0..10_000 {
            counts[a.select_action(&s, &mut rng).unwrap().0.index()] += 1;
        }
        let e = 10_000.0 / NUM_ACTIONS as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99th percentile of χ² with 31 degrees of freedom.
        assert!(chi2 < 52.19, "{chi2}");
    }

    fn hand_set(a: &mut DqnAgent, row: &[f64; NUM_ACTIONS]) {
        let last = a.online.layers.last_mut().unwrap();
        last.weights = Tensor::zeros(last.weights.shape());
        last.bias = Tensor::vector(row.to_vec()).unwrap();
    }

    #[test]
    fn greedy_argmax_and_ties() {
        let mut a = agent(DqnConfig::default(), 0);
        a.epsilon = 0.0;
        let mut row = [0.0; NUM_ACTIONS];
        row[7] = 1.0;
        hand_set(&mut a, &row);
        let mut rng = seeded(2);
        for seed in 0..20 {
            assert_eq!(a.select_action(&state(seed), &mut rng).unwrap().0.index(), 7);
        }
        row[7] = 0.0;
        row[3] = 2.0;
        row[9] = 2.0;
        hand_set(&mut a, &row);
        assert_eq!(a.greedy(&state(0)).unwrap().index(), 3);
    }

    #[test]
    fn greedy_invariant_under_constant_shift() {
        let mut a = agent(DqnConfig::default(), 3);
        let s = state(4);
        let before = a.greedy(&s).unwrap();
        let last = a.online.layers.last_mut().unwrap();
        last.bias = last.bias.map(|b| b + 123.25);
        assert_eq!(a.greedy(&s).unwrap(), before);
    }

    #[test]
    fn gamma_zero_target_is_reward() {
        let mut a = agent(DqnConfig { gamma: 0.0, reward_scale: 1.0, ..DqnConfig::default() }, 0);
        hand_set(&mut a, &[0.0; NUM_ACTIONS]);
        let batch = vec![transition(1, false), transition(2, false)];
        let (loss, _) = td_loss_and_gradients(&a.online, &a.target, &batch, 0.0, 1.0).unwrap();
        // Q ≡ 0, so the loss is the mean squared reward.
        assert!((loss - (11.0f64.powi(2) + 12.0f64.powi(2)) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn td_gradient_matches_differences() {
        let mut a = agent(DqnConfig::default(), 5);
        a.online = random_net(9);
        a.target = random_net(10);
        let batch: Vec<_> = (0..6).map(|i| transition(i, i == 5)).collect();
        let (_, grads) = td_loss_and_gradients(&a.online, &a.target, &batch, 0.9, 0.1).unwrap();
        let params: Vec<Tensor> = a.online.params().into_iter().cloned().collect();
        let analytic: Vec<Tensor> = grads.flat().into_iter().cloned().collect();
        let template = a.online.clone();
        let r = GradCheck::default().run(
            |p| {
                let mut net = template.clone();
                for (d, s) in net.params_mut().into_iter().zip(p) {
                    *d = s.clone();
                }
                td_loss_and_gradients(&net, &a.target, &batch, 0.9, 0.1).unwrap().0
            },
            &params,
            &analytic,
        );
        assert!(r.passed(1e-4), "{r:?}");
    }

    #[test]
    fn repeated_updates_reduce_loss() {
        let mut a = agent(DqnConfig::default(), 6);
        let batch = vec![transition(3, true); 8];
        let first = a.dqn_update(&batch).unwrap();
        let mut last = first;
        for _ in 0..49 {
            last = a.dqn_update(&batch).unwrap();
        }
        assert!(last < first, "{last} >= {first}");
    }

    #[test]
    fn target_sync_cadence() {
        let mut a = agent(DqnConfig { target_sync: 3, ..DqnConfig::default() }, 7);
        let batch = vec![transition(1, false)];
        a.dqn_update(&batch).unwrap();
        a.dqn_update(&batch).unwrap();
        assert_ne!(a.target, a.online);
        a.dqn_update(&batch).unwrap();
        assert_eq!(a.target, a.online);
    }

    #[test]
    fn zero_lr_freezes_q() {
        let mut a = agent(DqnConfig { lr: 0.0, ..DqnConfig::default() }, 8);
        let s = state(9);
        let q = a.q_values(&s).unwrap();
        for _ in 0..20 {
            a.dqn_update(&[transition(2, false)]).unwrap();
        }
        assert_eq!(a.q_values(&s).unwrap(), q);
    }

    #[test]
    fn replay_eviction_and_sampling() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(transition(i, false));
            assert!(b.len() <= 3);
        }
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![12.0, 13.0, 14.0]);
        assert!(matches!(b.sample(4, &mut seeded(0)), Err(HitlError::BufferTooSmall { requested: 4, occupancy: 3 })));
        assert_eq!(b.sample(3, &mut seeded(0)).unwrap().len(), 3);
    }

    #[test]
    fn learn_waits_for_a_full_batch() {
        let mut a = agent(DqnConfig { batch_size: 4, ..DqnConfig::default() }, 9);
        let mut rng = seeded(1);
        for i in 0..3 {
            a.buffer.push(transition(i, false));
            assert_eq!(a.learn(&mut rng).unwrap(), None);
        }
        a.buffer.push(transition(3, false));
        assert!(a.learn(&mut rng).unwrap().is_some());
        assert_eq!(a.updates(), 1);
    }

    #[test]
    fn centering_removes_constant_reward_offsets() {
        let run = |shift: f64, center: bool| {
            let mut a = agent(DqnConfig { batch_size: 4, center_rewards: center, ..DqnConfig::default() }, 3);
            for i in 0..6 {
                a.remember(RlTransition { reward: transition(i, false).reward + shift, ..transition(i, false) });
            }
            let mut rng = seeded(8);
            for _ in 0..20 {
                a.learn(&mut rng).unwrap();
            }
            (a.reward_baseline(), a.q_values(&state(0)).unwrap())
        };
        let (b0, q0) = run(0.0, true);
        let (b1, q1) = run(100.0, true);
        assert_eq!(b0, 12.5);
        assert!((b1 - b0 - 100.0).abs() < 1e-9);
        for (x, y) in q0.iter().zip(&q1) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        assert_eq!(run(0.0, false).0, 0.0);
    }
}
