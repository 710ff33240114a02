//! Episodes: generation, labelling, weighted sampling, feature encoding and
//! the line-oriented episode file.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{state_key, AbstractionError, AbstractionIndex};
use crate::agent::{AgentError, QNetwork};
use crate::artifact::Provenance;
use crate::env::{EnvConfig, EnvError, EnvKind, Environment, State, TerminationCause};

pub const EPISODE_FORMAT: &str = "rlfault-episodes";
pub const EPISODE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("episode {0} has not terminated")]
    Unterminated(String),
    #[error("asked for {requested} episodes but only {available} are available")]
    NotEnough { requested: usize, available: usize },
    #[error("corrupt episode file at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Training,
    Random,
    Crossover,
    Mutated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: State,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub origin: Origin,
    pub env: EnvKind,
    pub steps: Vec<Step>,
    /// State reached after the last action.
    pub terminal_state: State,
    pub termination_cause: TerminationCause,
    pub fault: bool,
    pub accumulated_reward: f64,
}

impl Episode {
    pub fn new(
        id: impl Into<String>,
        origin: Origin,
        env: EnvKind,
        steps: Vec<Step>,
        terminal_state: State,
        termination_cause: TerminationCause,
    ) -> Self {
        let accumulated_reward = reward_sum(&steps);
        Episode {
            id: id.into(),
            origin,
            env,
            steps,
            terminal_state,
            termination_cause,
            fault: termination_cause == TerminationCause::BoundaryFault,
            accumulated_reward,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = &State> {
        self.steps.iter().map(|s| &s.state)
    }
}

/// Left-to-right sum; every stored `accumulated_reward` is produced by this.
pub fn reward_sum(steps: &[Step]) -> f64 {
    steps.iter().fold(0.0, |acc, s| acc + s.reward)
}

pub fn label_fault(e: &Episode) -> Result<bool, EpisodeError> {
    if e.termination_cause == TerminationCause::None {
        return Err(EpisodeError::Unterminated(e.id.clone()));
    }
    Ok(e.termination_cause == TerminationCause::BoundaryFault)
}

/// Follows the greedy policy from the environment's current state until it
/// terminates, appending to `steps`. Returns the terminal state and cause.
pub fn rollout_greedy(
    env: &mut Environment,
    net: &QNetwork,
    steps: &mut Vec<Step>,
) -> Result<(State, TerminationCause), EpisodeError> {
    let mut state = env.state().clone();
    loop {
        let action = net.select_action(&state)?;
        let out = env.step(action)?;
        steps.push(Step {
            state,
            action,
            reward: out.reward,
        });
        if out.terminated {
            return Ok((out.next_state, out.termination_cause));
        }
        state = out.next_state;
    }
}

/// Greedy executions from fresh random initial states, ids `{prefix}-{i}`.
pub fn run_random_episodes<R: Rng + ?Sized>(
    env_config: &EnvConfig,
    net: &QNetwork,
    count: usize,
    rng: &mut R,
    prefix: &str,
) -> Result<Vec<Episode>, EpisodeError> {
    let mut env = Environment::new(env_config.clone())?;
    // Initial states are drawn sequentially; the rollouts are deterministic
    // and fan out across threads.
    let starts: Vec<State> = (0..count).map(|_| env.reset(rng)).collect();
    starts
        .into_par_iter()
        .enumerate()
        .map(|(i, s0)| {
            let mut env = Environment::new(env_config.clone())?;
            env.set_state(&s0)?;
            env.set_elapsed(0);
            let mut steps = Vec::new();
            let (terminal, cause) = rollout_greedy(&mut env, net, &mut steps)?;
            Ok(Episode::new(
                format!("{prefix}-{i}"),
                Origin::Random,
                env_config.kind,
                steps,
                terminal,
                cause,
            ))
        })
        .collect()
}

/// Weighted sampling without replacement; episode `i` (1-based, completion
/// order) starts with weight `i`.
pub fn sample_training_episodes<R: Rng + ?Sized>(
    log: &[Episode],
    k: usize,
    rng: &mut R,
) -> Result<Vec<Episode>, EpisodeError> {
    if k > log.len() {
        return Err(EpisodeError::NotEnough {
            requested: k,
            available: log.len(),
        });
    }
    let mut pool: Vec<usize> = (0..log.len()).collect();
    let mut total: u64 = (1..=log.len() as u64).sum();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut ticket = rng.gen_range(0..total);
        let pos = pool
            .iter()
            .position(|&i| {
                let w = i as u64 + 1;
                if ticket < w {
                    true
                } else {
                    ticket -= w;
                    false
                }
            })
            .expect("ticket falls inside the remaining weight");
        let chosen = pool.remove(pos);
        total -= chosen as u64 + 1;
        let mut e = log[chosen].clone();
        e.origin = Origin::Training;
        out.push(e);
    }
    Ok(out)
}

/// Presence/absence of each known abstract state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<u8>);

impl FeatureVector {
    pub fn zeros(n: usize) -> Self {
        FeatureVector(vec![0; n])
    }

    pub fn from_ids(n: usize, ids: impl IntoIterator<Item = usize>) -> Self {
        let mut v = Self::zeros(n);
        for id in ids {
            v.0[id] = 1;
        }
        v
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i] != 0
    }
}

pub fn encode_features(e: &Episode, index: &AbstractionIndex, net: &QNetwork) -> Result<FeatureVector, EpisodeError> {
    let mut ids = Vec::new();
    for s in e.states() {
        if let Some(id) = index.lookup(&state_key(net, s, index.level())?) {
            ids.push(id);
        }
    }
    Ok(FeatureVector::from_ids(index.len(), ids))
}

#[derive(Serialize, Deserialize)]
struct EpisodeHeader {
    format: String,
    version: u32,
    provenance: Provenance,
    count: usize,
}

pub fn write_episodes(path: &Path, episodes: &[Episode], provenance: &Provenance) -> Result<(), EpisodeError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let header = EpisodeHeader {
        format: EPISODE_FORMAT.into(),
        version: EPISODE_VERSION,
        provenance: provenance.clone(),
        count: episodes.len(),
    };
    let line = |v: serde_json::Result<String>| {
        v.map_err(|e| EpisodeError::Corrupt {
            line: 0,
            message: e.to_string(),
        })
    };
    writeln!(w, "{}", line(serde_json::to_string(&header))?)?;
    for e in episodes {
        writeln!(w, "{}", line(serde_json::to_string(e))?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episodes(path: &Path) -> Result<(Vec<Episode>, Provenance), EpisodeError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let corrupt = |line: usize, message: String| EpisodeError::Corrupt { line, message };
    let first = lines.next().ok_or_else(|| corrupt(1, "empty file".into()))??;
    let header: EpisodeHeader = serde_json::from_str(&first).map_err(|e| corrupt(1, e.to_string()))?;
    if header.format != EPISODE_FORMAT || header.version != EPISODE_VERSION {
        return Err(corrupt(1, format!("unexpected format {} v{}", header.format, header.version)));
    }
    let mut episodes = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let e: Episode = serde_json::from_str(&line).map_err(|err| corrupt(i + 2, err.to_string()))?;
        episodes.push(e);
    }
    if episodes.len() != header.count {
        return Err(corrupt(
            episodes.len() + 1,
            format!("header promises {} episodes, found {}", header.count, episodes.len()),
        ));
    }
    Ok((episodes, header.provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{AbstractKey, AbstractionLevel};
    use crate::agent::{Activation, Dense};
    use crate::rng::seeded;

    fn dummy(id: usize, cause: TerminationCause) -> Episode {
        Episode::new(
            format!("e{id}"),
            Origin::Training,
            EnvKind::CartPole,
            vec![Step {
                state: State(vec![0.0; 4]),
                action: 0,
                reward: 1.0,
            }],
            State(vec![0.0; 4]),
            cause,
        )
    }

    #[test]
    fn fault_labels() {
        assert!(label_fault(&dummy(0, TerminationCause::BoundaryFault)).unwrap());
        assert!(!label_fault(&dummy(0, TerminationCause::Goal)).unwrap());
        assert!(!label_fault(&dummy(0, TerminationCause::AngleLimit)).unwrap());
        assert!(label_fault(&dummy(0, TerminationCause::None)).is_err());
    }

    #[test]
    fn sampling_exhausts_and_rejects_oversize() {
        let log: Vec<_> = (0..5).map(|i| dummy(i, TerminationCause::TimeLimit)).collect();
        let mut got: Vec<_> = sample_training_episodes(&log, 5, &mut seeded(1))
            .unwrap()
            .into_iter()
            .map(|e| e.id)
            .collect();
        got.sort();
        assert_eq!(got, vec!["e0", "e1", "e2", "e3", "e4"]);
        assert!(matches!(
            sample_training_episodes(&log, 6, &mut seeded(1)),
            Err(EpisodeError::NotEnough { .. })
        ));
    }

    #[test]
    fn first_draw_frequencies_follow_linear_weights() {
        let log: Vec<_> = (0..3).map(|i| dummy(i, TerminationCause::TimeLimit)).collect();
        let mut rng = seeded(77);
        let mut counts = [0usize; 3];
        let trials = 60_000;
        for _ in 0..trials {
            let e = &sample_training_episodes(&log, 1, &mut rng).unwrap()[0];
            counts[e.id[1..].parse::<usize>().unwrap()] += 1;
        }
        for (i, want) in [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0].iter().enumerate() {
            assert!((counts[i] as f64 / trials as f64 - want).abs() < 0.01);
        }
    }

    #[test]
    fn feature_encoding_is_set_semantics() {
        // one-action network, Q = first feature; buckets of width 1
        let net = QNetwork::new(vec![Dense {
            inputs: 4,
            outputs: 1,
            activation: Activation::Identity,
            weights: vec![1.0, 0.0, 0.0, 0.0],
            bias: vec![0.0],
        }])
        .unwrap();
        let d = AbstractionLevel::new(1.0).unwrap();
        let index = crate::abstraction::build_index(
            &[State(vec![0.5, 0.0, 0.0, 0.0]), State(vec![1.5, 0.0, 0.0, 0.0]), State(vec![2.5, 0.0, 0.0, 0.0])],
            &net,
            d,
        )
        .unwrap();
        assert_eq!(index.lookup(&AbstractKey(vec![3])), Some(2));
        let mk = |xs: &[f64]| {
            Episode::new(
                "x",
                Origin::Random,
                EnvKind::CartPole,
                xs.iter()
                    .map(|&x| Step {
                        state: State(vec![x, 0.0, 0.0, 0.0]),
                        action: 0,
                        reward: 1.0,
                    })
                    .collect(),
                State(vec![0.0; 4]),
                TerminationCause::AngleLimit,
            )
        };
        assert_eq!(encode_features(&mk(&[0.2, 2.7]), &index, &net).unwrap().0, vec![1, 0, 1]);
        assert_eq!(
            encode_features(&mk(&[2.7, 0.2, 0.2, 2.1]), &index, &net).unwrap(),
            encode_features(&mk(&[0.2, 2.7]), &index, &net).unwrap()
        );
        assert_eq!(encode_features(&mk(&[9.0, -4.0]), &index, &net).unwrap().0, vec![0, 0, 0]);
    }

    #[test]
    fn random_episodes_are_deterministic_and_consistent() {
        let cfg = EnvConfig::cart_pole();
        let net = QNetwork::init(4, &[8], 2, &mut seeded(3));
        let a = run_random_episodes(&cfg, &net, 20, &mut seeded(5), "r").unwrap();
        let b = run_random_episodes(&cfg, &net, 20, &mut seeded(5), "r").unwrap();
        assert_eq!(a, b);
        for e in &a {
            assert_eq!(e.accumulated_reward, e.len() as f64);
            assert_eq!(e.fault, cfg.violates_boundary(&e.terminal_state));
            assert_eq!(e.origin, Origin::Random);
        }
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let cfg = EnvConfig::mountain_car();
        let net = QNetwork::init(2, &[8], 3, &mut seeded(4));
        let eps = run_random_episodes(&cfg, &net, 5, &mut seeded(6), "r").unwrap();
        let path = std::env::temp_dir().join(format!("rlfault-eps-{}.jsonl", std::process::id()));
        let prov = Provenance::new("abc", 6);
        write_episodes(&path, &eps, &prov).unwrap();
        let (back, p) = read_episodes(&path).unwrap();
        assert_eq!(p, prov);
        assert_eq!(back, eps);
        for (x, y) in back.iter().zip(&eps) {
            for (s, t) in x.steps.iter().zip(&y.steps) {
                assert!(s.state.0.iter().zip(&t.state.0).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
        fs::remove_file(&path).ok();
    }
}
