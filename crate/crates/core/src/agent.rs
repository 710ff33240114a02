//! Feed-forward Q-network, greedy policy and double-DQN training.

use std::fs;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::Provenance;
use crate::env::{EnvConfig, EnvError, Environment, State, TerminationCause};
use crate::episode::{Episode, Origin, Step};
use crate::rng::{seeded, StageRng};

pub const AGENT_FORMAT: &str = "rlfault-agent";
pub const AGENT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("input has {got} features, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("invalid network: {0}")]
    Shape(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at timestep {timestep}: loss is {loss}")]
    Diverged { timestep: usize, loss: f64 },
    #[error("corrupt agent file: {0}")]
    Corrupt(String),
    #[error("agent file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Dense layer, `weights` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let z = row.iter().zip(x).fold(self.bias[o], |acc, (w, v)| acc + w * v);
            out.push(match self.activation {
                Activation::Relu => z.max(0.0),
                Activation::Identity => z,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    layers: Vec<Dense>,
}

impl QNetwork {
    pub fn new(layers: Vec<Dense>) -> Result<Self, AgentError> {
        if layers.is_empty() {
            return Err(AgentError::Shape("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(AgentError::Shape(format!("layer {i} parameter count mismatch")));
            }
            if l.weights.iter().chain(&l.bias).any(|p| !p.is_finite()) {
                return Err(AgentError::Shape(format!("layer {i} has non-finite parameters")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(AgentError::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        Ok(QNetwork { layers })
    }

    /// ReLU hidden layers, linear head, uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let bound = 1.0 / (d[0] as f64).sqrt();
                Dense {
                    inputs: d[0],
                    outputs: d[1],
                    activation: if i == last { Activation::Identity } else { Activation::Relu },
                    weights: (0..d[0] * d[1]).map(|_| rng.gen_range(-bound..bound)).collect(),
                    bias: (0..d[1]).map(|_| rng.gen_range(-bound..bound)).collect(),
                }
            })
            .collect();
        QNetwork { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn action_count(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), AgentError> {
        if x.len() != self.input_dim() {
            return Err(AgentError::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn q_values(&self, s: &State) -> Result<Vec<f64>, AgentError> {
        self.check_input(s.as_slice())?;
        Ok(self.forward(s.as_slice()))
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Activations of every layer, input included.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward_into(trace.last().unwrap(), &mut out);
            trace.push(out);
        }
        trace
    }

    pub fn select_action(&self, s: &State) -> Result<usize, AgentError> {
        Ok(argmax(&self.q_values(s)?))
    }

    pub fn action_probabilities(&self, s: &State, temperature: f64) -> Result<Vec<f64>, AgentError> {
        softmax(&self.q_values(s)?, temperature)
    }

    /// Mean Huber loss of `Q(s, a)` against fixed targets, with its gradient
    /// in [`QNetwork::params`] order.
    pub fn td_loss_and_gradient(&self, batch: &[TdSample]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.param_count()];
        let mut loss = 0.0;
        let n = batch.len().max(1) as f64;
        let offsets = self.param_offsets();
        for sample in batch {
            let trace = self.forward_trace(&sample.state);
            let q = trace.last().unwrap();
            let err = q[sample.action] - sample.target;
            loss += huber(err);
            let mut delta = vec![0.0; q.len()];
            delta[sample.action] = huber_grad(err) / n;
            for (li, layer) in self.layers.iter().enumerate().rev() {
                let out = &trace[li + 1];
                if layer.activation == Activation::Relu {
                    for (d, o) in delta.iter_mut().zip(out) {
                        if *o <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                let input = &trace[li];
                let (w_off, b_off) = offsets[li];
                let mut back = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = o * layer.inputs;
                    for i in 0..layer.inputs {
                        grad[w_off + row + i] += d * input[i];
                        back[i] += d * layer.weights[row + i];
                    }
                    grad[b_off + o] += d;
                }
                delta = back;
            }
        }
        (loss / n, grad)
    }

    fn param_offsets(&self) -> Vec<(usize, usize)> {
        let mut offset = 0;
        self.layers
            .iter()
            .map(|l| {
                let w = offset;
                let b = w + l.weights.len();
                offset = b + l.bias.len();
                (w, b)
            })
            .collect()
    }

    /// Flattened parameters: per layer, weights then bias.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
    }

    fn apply_update(&mut self, update: &[f64]) {
        let mut it = update.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w -= it.next().unwrap();
            }
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(values: &[f64], temperature: f64) -> Result<Vec<f64>, AgentError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(AgentError::Temperature(temperature));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

fn huber(err: f64) -> f64 {
    if err.abs() <= 1.0 {
        0.5 * err * err
    } else {
        err.abs() - 0.5
    }
}

fn huber_grad(err: f64) -> f64 {
    err.clamp(-1.0, 1.0)
}

/// Regression sample for the Q-loss: the action's value is pulled toward `target`.
#[derive(Debug, Clone)]
pub struct TdSample {
    pub state: Vec<f64>,
    pub action: usize,
    pub target: f64,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True terminal: no bootstrap. Time-limit truncation is not terminal.
    pub done: bool,
}

/// Double-DQN regression targets: the online network picks the next action,
/// the target network values it.
pub fn double_dqn_targets(online: &QNetwork, target: &QNetwork, batch: &[Transition], gamma: f64) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                t.reward
            } else {
                let next_action = argmax(&online.forward(&t.next_state));
                t.reward + gamma * target.forward(&t.next_state)[next_action]
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_timesteps: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub target_sync_interval: usize,
    pub learning_starts: usize,
    pub train_frequency: usize,
    pub gradient_steps: usize,
    pub max_grad_norm: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_fraction: f64,
    pub hidden: Vec<usize>,
    /// Greedy evaluation every this many steps once learning has started;
    /// the best-scoring network is returned. 0 returns the final network.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_timesteps: 50_000,
            replay_capacity: 50_000,
            batch_size: 64,
            gamma: 0.99,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Sgd,
            target_sync_interval: 500,
            learning_starts: 1_000,
            train_frequency: 1,
            gradient_steps: 1,
            max_grad_norm: 10.0,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.1,
            hidden: vec![64, 64],
            eval_interval: 0,
            eval_episodes: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.replay_capacity == 0 || self.batch_size == 0 {
            return bad("replay capacity and batch size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.target_sync_interval == 0 || self.train_frequency == 0 {
            return bad("target sync interval and train frequency must be positive");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start)
            || !(0.0..=1.0).contains(&self.epsilon_end)
            || !(0.0..=1.0).contains(&self.epsilon_decay_fraction)
        {
            return bad("epsilon schedule values must lie in [0, 1]");
        }
        if self.eval_interval > 0 && self.eval_episodes == 0 {
            return bad("eval_episodes must be positive when checkpointing");
        }
        Ok(())
    }

    fn epsilon(&self, t: usize) -> f64 {
        let horizon = self.epsilon_decay_fraction * self.total_timesteps as f64;
        if horizon <= 0.0 {
            return self.epsilon_end;
        }
        let frac = (t as f64 / horizon).min(1.0);
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

/// Completed training episodes in completion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub episodes: Vec<Episode>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, grad: &[f64], lr: f64) -> Vec<f64> {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        grad.iter()
            .enumerate()
            .map(|(i, g)| {
                self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
                self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
                lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS)
            })
            .collect()
    }
}

pub fn train_dqn(env_config: &EnvConfig, config: &TrainConfig) -> Result<(QNetwork, TrainingLog), AgentError> {
    config.validate()?;
    let mut rng = seeded(config.seed);
    let mut env = Environment::new(env_config.clone())?;
    let mut online = QNetwork::init(env_config.obs_dim(), &config.hidden, env_config.action_count(), &mut rng);
    let mut target = online.clone();
    let mut adam = Adam {
        m: vec![0.0; online.param_count()],
        v: vec![0.0; online.param_count()],
        t: 0,
    };
    let mut replay: Vec<Transition> = Vec::with_capacity(config.replay_capacity.min(1 << 20));
    let mut replay_head = 0;
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, QNetwork)> = None;

    let mut state = env.reset(&mut rng);
    let mut steps: Vec<Step> = Vec::new();
    for t in 0..config.total_timesteps {
        let action = if rng.gen::<f64>() < config.epsilon(t) {
            rng.gen_range(0..env_config.action_count())
        } else {
            argmax(&online.forward(state.as_slice()))
        };
        let out = env.step(action)?;
        steps.push(Step {
            state: state.clone(),
            action,
            reward: out.reward,
        });
        let transition = Transition {
            state: state.0.clone(),
            action,
            reward: out.reward,
            next_state: out.next_state.0.clone(),
            done: out.terminated && out.termination_cause != TerminationCause::TimeLimit,
        };
        if replay.len() < config.replay_capacity {
            replay.push(transition);
        } else {
            replay[replay_head] = transition;
        }
        replay_head = (replay_head + 1) % config.replay_capacity;

        if out.terminated {
            let id = format!("train-{}", log.episodes.len());
            log.episodes.push(Episode::new(
                id,
                Origin::Training,
                env_config.kind,
                std::mem::take(&mut steps),
                out.next_state.clone(),
                out.termination_cause,
            ));
            state = env.reset(&mut rng);
        } else {
            state = out.next_state;
        }

        if t >= config.learning_starts && replay.len() >= config.batch_size && t % config.train_frequency == 0 {
            for _ in 0..config.gradient_steps {
                let picks = sample_indices(&mut rng, replay.len(), config.batch_size);
                let batch: Vec<Transition> = picks.iter().map(|i| replay[i].clone()).collect();
                let targets = double_dqn_targets(&online, &target, &batch, config.gamma);
                let samples: Vec<TdSample> = batch
                    .into_iter()
                    .zip(targets)
                    .map(|(tr, y)| TdSample {
                        state: tr.state,
                        action: tr.action,
                        target: y,
                    })
                    .collect();
                let (loss, mut grad) = online.td_loss_and_gradient(&samples);
                if !loss.is_finite() {
                    return Err(AgentError::Diverged { timestep: t, loss });
                }
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if config.max_grad_norm > 0.0 && norm > config.max_grad_norm {
                    let scale = config.max_grad_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= scale);
                }
                let update = match config.optimizer {
                    OptimizerKind::Sgd => grad.iter().map(|g| config.learning_rate * g).collect(),
                    OptimizerKind::Adam => adam.step(&grad, config.learning_rate),
                };
                online.apply_update(&update);
            }
        }
        if (t + 1) % config.target_sync_interval == 0 {
            target = online.clone();
        }
        let checkpoint = config.eval_interval > 0 && t >= config.learning_starts && (t + 1) % config.eval_interval == 0;
        if checkpoint || (config.eval_interval > 0 && t + 1 == config.total_timesteps) {
            let score = {
                // same starts at every checkpoint, drawn apart from the training stream
                evaluate(&online, env_config, config.eval_episodes, &mut crate::rng::derive(config.seed, 1))?
            };
            if best.as_ref().map_or(true, |(b, _)| score > *b) {
                best = Some((score, online.clone()));
            }
        }
    }
    Ok((best.map_or(online, |(_, net)| net), log))
}

/// Mean greedy-policy return over `episodes` fresh resets.
pub fn evaluate(net: &QNetwork, env_config: &EnvConfig, episodes: usize, rng: &mut StageRng) -> Result<f64, AgentError> {
    let mut env = Environment::new(env_config.clone())?;
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut s = env.reset(rng);
        loop {
            let out = env.step(net.select_action(&s)?)?;
            total += out.reward;
            if out.terminated {
                break;
            }
            s = out.next_state;
        }
    }
    Ok(total / episodes.max(1) as f64)
}

/// Trained agent with the metadata stored alongside it on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub format: String,
    pub version: u32,
    pub env: String,
    pub training_seed: u64,
    pub timesteps: usize,
    pub provenance: Provenance,
    pub network: QNetwork,
}

impl AgentRecord {
    pub fn new(network: QNetwork, env: &EnvConfig, train: &TrainConfig, provenance: Provenance) -> Self {
        AgentRecord {
            format: AGENT_FORMAT.into(),
            version: AGENT_VERSION,
            env: env.kind.tag().into(),
            training_seed: train.seed,
            timesteps: train.total_timesteps,
            provenance,
            network,
        }
    }
}

pub fn save_agent(path: &Path, record: &AgentRecord) -> Result<(), AgentError> {
    let text = serde_json::to_string(record).map_err(|e| AgentError::Corrupt(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_agent(path: &Path) -> Result<AgentRecord, AgentError> {
    let text = fs::read_to_string(path)?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| AgentError::Corrupt(e.to_string()))?;
    if raw.get("format").and_then(|f| f.as_str()) != Some(AGENT_FORMAT) {
        return Err(AgentError::Corrupt("missing agent format tag".into()));
    }
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| AgentError::Corrupt("missing version".into()))? as u32;
    if version != AGENT_VERSION {
        return Err(AgentError::Version {
            found: version,
            expected: AGENT_VERSION,
        });
    }
    let record: AgentRecord = serde_json::from_value(raw).map_err(|e| AgentError::Corrupt(e.to_string()))?;
    let network = QNetwork::new(record.network.layers.clone()).map_err(|e| AgentError::Corrupt(e.to_string()))?;
    Ok(AgentRecord { network, ..record })
}
