//! Deep Q-learning policy: a two-action Q-network over encoded sentence
//! states, experience replay, epsilon-greedy selection, and minibatch
//! updates against a periodically synced target network.
//!
//! Transitions store raw observations rather than encoded state vectors:
//! the encoders are part of the policy parameters, so each replayed
//! transition is re-encoded under the current parameters and gradients flow
//! all the way through.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nncore::{Activation, AdamParams, AdamState, DenseLayer};
use crate::rng;
use crate::state::{self, EncodeCache, EncoderConfig, Observation, StateEncoderParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Skip,
    Annotate,
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Skip => 0,
            Action::Annotate => 1,
        }
    }

    pub fn from_index(i: usize) -> Action {
        if i == 0 {
            Action::Skip
        } else {
            Action::Annotate
        }
    }
}

/// What the agent sees after acting: either the next sentence's observation
/// or the end of the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NextObs {
    Observation(Observation),
    Terminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next: NextObs,
}

/// Bounded FIFO buffer; pushing past capacity evicts the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    buf: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayMemory { buf: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.buf[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buf.iter()
    }

    /// Uniform sample of `batch` distinct indices (partial Fisher-Yates).
    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Vec<usize> {
        assert!(batch <= self.len());
        let mut idx: Vec<usize> = (0..self.len()).collect();
        for i in 0..batch {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        idx.truncate(batch);
        idx
    }
}

/// Epsilon decays linearly from `start` to `end` over `decay_steps` action
/// selections, then stays at `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl ExplorationSchedule {
    pub fn new(start: f64, end: f64, decay_steps: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&end) || !(0.0..=1.0).contains(&start) || end > start {
            return Err(Error::Config(format!(
                "exploration schedule needs 0 <= end <= start <= 1, got {start}..{end}"
            )));
        }
        Ok(ExplorationSchedule { start, end, decay_steps })
    }

    pub fn epsilon_at(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Greedy choice with ties broken toward annotating.
pub fn greedy_action(q: (f64, f64)) -> Action {
    if q.1 >= q.0 {
        Action::Annotate
    } else {
        Action::Skip
    }
}

/// Epsilon-greedy: with probability epsilon(step) a uniform random action,
/// otherwise the greedy one.
pub fn select_action(
    q: (f64, f64),
    schedule: &ExplorationSchedule,
    step: u64,
    rng: &mut impl Rng,
) -> Action {
    let eps = schedule.epsilon_at(step);
    let u: f64 = rng.gen();
    if u < eps {
        Action::from_index(rng.gen_range(0..2usize))
    } else {
        greedy_action(q)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QNetConfig {
    pub encoder: EncoderConfig,
    pub hidden_dim: usize,
}

impl QNetConfig {
    /// Reference sizes: full encoder configuration plus a 256-unit hidden
    /// layer before the two Q outputs.
    pub fn reference(num_labels: usize) -> Self {
        QNetConfig { encoder: EncoderConfig::reference(num_labels), hidden_dim: 256 }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        Ok(())
    }
}

/// State encoders plus a two-layer head producing (Q(s,0), Q(s,1)).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QNetwork {
    pub config: QNetConfig,
    pub encoder: StateEncoderParams,
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

impl QNetwork {
    pub fn init(config: QNetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let encoder = StateEncoderParams::init(&config.encoder, rng);
        let hidden =
            DenseLayer::glorot(config.encoder.state_len(), config.hidden_dim, Activation::Relu, rng);
        let output = DenseLayer::glorot(config.hidden_dim, 2, Activation::Identity, rng);
        Ok(QNetwork { config, encoder, hidden, output })
    }

    pub fn param_len(&self) -> usize {
        self.encoder.param_len() + self.hidden.param_len() + self.output.param_len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        self.encoder.write_params(&mut out);
        self.hidden.write_params(&mut out);
        self.output.write_params(&mut out);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(Error::Shape(format!(
                "expected {} network parameters, got {}",
                self.param_len(),
                params.len()
            )));
        }
        let mut off = 0;
        self.encoder.read_params(params, &mut off);
        self.hidden.read_params(params, &mut off);
        self.output.read_params(params, &mut off);
        Ok(())
    }

    /// Q values for an already-encoded state.
    pub fn q_forward(&self, s: &state::AgentState) -> Result<(f64, f64)> {
        if s.len() != self.config.encoder.state_len() {
            return Err(Error::Shape(format!(
                "state length {} does not match network input {}",
                s.len(),
                self.config.encoder.state_len()
            )));
        }
        let h = self.hidden.forward(s.as_slice());
        let out = self.output.forward(&h);
        Ok((out[0], out[1]))
    }

    /// Encodes an observation under this network's encoders and returns its
    /// Q values.
    pub fn q_of_observation(&self, obs: &Observation) -> Result<(f64, f64)> {
        let cache = state::encode_observation(obs, &self.encoder, &self.config.encoder)?;
        self.q_forward(&cache.state)
    }
}

/// y = r for terminal transitions, else r + gamma * max_a' Q_target(s', a').
pub fn bellman_target(
    reward: f64,
    next: &NextObs,
    target: &QNetwork,
    gamma: f64,
) -> Result<f64> {
    match next {
        NextObs::Terminate => Ok(reward),
        NextObs::Observation(obs) => {
            let (q0, q1) = target.q_of_observation(obs)?;
            Ok(reward + gamma * q0.max(q1))
        }
    }
}

/// Mean squared TD error over `batch` and its gradient in the flat
/// parameter layout of [`QNetwork::params`]. Targets come from the frozen
/// `target` network; gradients flow through `net` including its encoders.
pub fn dqn_loss_and_grad(
    net: &QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    assert!(!batch.is_empty(), "empty minibatch");
    let m = batch.len() as f64;
    let mut grads = vec![0.0; net.param_len()];
    let enc_len = net.encoder.param_len();
    let (enc_g, rest) = grads.split_at_mut(enc_len);
    let (hw, rest) = rest.split_at_mut(net.hidden.w.len());
    let (hb, rest) = rest.split_at_mut(net.hidden.b.len());
    let (ow, ob) = rest.split_at_mut(net.output.w.len());

    let mut loss = 0.0;
    for t in batch {
        let cache: EncodeCache =
            state::encode_observation(&t.obs, &net.encoder, &net.config.encoder)?;
        let s = cache.state.as_slice();
        let h = net.hidden.forward(s);
        let out = net.output.forward(&h);
        let a = t.action.index();
        let y = bellman_target(t.reward, &t.next, target, gamma)?;
        let diff = out[a] - y;
        loss += diff * diff / m;

        let mut dout = [0.0; 2];
        dout[a] = 2.0 * diff / m;
        let mut dh = vec![0.0; net.config.hidden_dim];
        net.output.backward(&h, &dout, ow, ob, Some(&mut dh));
        let mut ds = vec![0.0; s.len()];
        net.hidden.backward(s, &dh, hw, hb, Some(&mut ds));
        state::encode_backward(&t.obs, &net.encoder, &cache, &ds, enc_g);
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite DQN loss {loss}")));
    }
    Ok((loss, grads))
}

/// One minibatch gradient step. Does nothing (and reports `false`) while the
/// memory holds fewer transitions than `batch_size`. On a non-finite loss or
/// gradient the parameters are left untouched and the error is returned.
#[allow(clippy::too_many_arguments)]
pub fn dqn_update(
    net: &mut QNetwork,
    target: &QNetwork,
    memory: &ReplayMemory,
    batch_size: usize,
    gamma: f64,
    adam: &mut AdamState,
    hp: &AdamParams,
    rng: &mut impl Rng,
) -> Result<bool> {
    if memory.len() < batch_size {
        return Ok(false);
    }
    let idxs = memory.sample_indices(batch_size, rng);
    let batch: Vec<&Transition> = idxs.iter().map(|&i| memory.get(i)).collect();
    let (_, grad) = dqn_loss_and_grad(net, target, &batch, gamma)?;
    let mut params = net.params();
    adam.step(&mut params, &grad, hp)?;
    net.set_params(&params)?;
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub net: QNetConfig,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Target network refresh period, in completed updates. 1 keeps the
    /// target exactly one update behind.
    pub sync_every: u64,
    pub schedule: ExplorationSchedule,
    pub learning_rate: f64,
}

impl AgentConfig {
    /// Reference hyperparameters; `decay_steps` is supplied by the caller
    /// since it depends on the planned training length.
    pub fn reference(num_labels: usize, decay_steps: u64) -> Self {
        AgentConfig {
            net: QNetConfig::reference(num_labels),
            gamma: 0.99,
            batch_size: 32,
            replay_capacity: 10_000,
            sync_every: 100,
            schedule: ExplorationSchedule { start: 1.0, end: 0.1, decay_steps },
            learning_rate: 0.001,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.sync_every == 0 {
            return Err(Error::Config(
                "batch_size, replay_capacity, and sync_every must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        ExplorationSchedule::new(self.schedule.start, self.schedule.end, self.schedule.decay_steps)?;
        Ok(())
    }
}

/// Owns the online network, target network, replay memory, and optimizer
/// state; one trainer mutates it, everything else reads snapshots.
#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub net: QNetwork,
    pub target: QNetwork,
    pub memory: ReplayMemory,
    pub adam: AdamState,
    pub adam_hp: AdamParams,
    /// Action selections made so far; drives the exploration schedule.
    pub steps: u64,
    /// Gradient updates performed; drives target syncing.
    pub updates: u64,
}

impl Agent {
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, "agent-init");
        let net = QNetwork::init(config.net.clone(), &mut r)?;
        let target = net.clone();
        let adam = AdamState::new(net.param_len());
        let adam_hp = AdamParams::with_alpha(config.learning_rate);
        Ok(Agent {
            memory: ReplayMemory::new(config.replay_capacity),
            config,
            net,
            target,
            adam,
            adam_hp,
            steps: 0,
            updates: 0,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.config.schedule.epsilon_at(self.steps)
    }

    /// Epsilon-greedy action for `obs`, advancing the schedule position.
    pub fn act(&mut self, obs: &Observation, rng: &mut impl Rng) -> Result<Action> {
        let q = self.net.q_of_observation(obs)?;
        let a = select_action(q, &self.config.schedule, self.steps, rng);
        self.steps += 1;
        Ok(a)
    }

    /// Pure greedy action; does not advance the schedule.
    pub fn greedy(&self, obs: &Observation) -> Result<Action> {
        Ok(greedy_action(self.net.q_of_observation(obs)?))
    }

    pub fn push(&mut self, t: Transition) {
        self.memory.push(t);
    }

    /// One DQN update if the memory is full enough; syncs the target every
    /// `sync_every` completed updates.
    pub fn update(&mut self, rng: &mut impl Rng) -> Result<bool> {
        let did = dqn_update(
            &mut self.net,
            &self.target,
            &self.memory,
            self.config.batch_size,
            self.config.gamma,
            &mut self.adam,
            &self.adam_hp,
            rng,
        )?;
        if did {
            self.updates += 1;
            if self.updates % self.config.sync_every == 0 {
                self.sync_target();
            }
        }
        Ok(did)
    }

    pub fn sync_target(&mut self) {
        self.target = self.net.clone();
    }

    /// Drops all stored transitions, e.g. before fine-tuning on a new pool.
    pub fn reset_memory(&mut self) {
        self.memory = ReplayMemory::new(self.config.replay_capacity);
    }

    pub fn checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            config: self.config.clone(),
            net_params: self.net.params(),
            target_params: self.target.params(),
            adam: self.adam.clone(),
            steps: self.steps,
            updates: self.updates,
        }
    }

    pub fn from_checkpoint(ck: PolicyCheckpoint) -> Result<Self> {
        ck.config.validate()?;
        let mut agent = Agent::new(ck.config, 0)?;
        agent.net.set_params(&ck.net_params)?;
        agent.target.set_params(&ck.target_params)?;
        if ck.adam.m.len() != agent.net.param_len() {
            return Err(Error::Checkpoint(format!(
                "optimizer state length {} does not match network {}",
                ck.adam.m.len(),
                agent.net.param_len()
            )));
        }
        agent.adam = ck.adam;
        agent.steps = ck.steps;
        agent.updates = ck.updates;
        Ok(agent)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(&self.checkpoint())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        let ck: PolicyCheckpoint =
            serde_json::from_str(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Agent::from_checkpoint(ck)
    }

    /// Digest of the full checkpoint (both networks, optimizer, counters);
    /// any parameter or schedule change shows up.
    pub fn checksum(&self) -> u64 {
        let json = serde_json::to_string(&self.checkpoint()).expect("checkpoint serializes");
        rng::fnv1a64(json.as_bytes())
    }
}

/// Everything needed to resume training or act greedily: all parameters,
/// optimizer state, schedule position, and the sync counter. The replay
/// memory is deliberately not persisted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub config: AgentConfig,
    pub net_params: Vec<f64>,
    pub target_params: Vec<f64>,
    pub adam: AdamState,
    pub steps: u64,
    pub updates: u64,
}
