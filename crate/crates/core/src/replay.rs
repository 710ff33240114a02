//! Post-search validation by replaying episodes against the live agent.
//!
//! Replay starts the environment in the episode's first recorded state and
//! lets the agent act. When the agent picks a different action than the one
//! recorded, the environment state is overwritten with the recorded state and
//! the agent is asked again; a second disagreement makes the episode invalid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, QNetwork};
use crate::env::{EnvConfig, EnvError, Environment, State, TerminationCause};
use crate::episode::{Episode, Step};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot compare states of dimension {0} and {1}")]
    Dimension(usize, usize),
    #[error("episode {0} has no steps")]
    EmptyEpisode(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// `1 - cos(u, v)`. A zero vector is at distance 0 from another zero vector
/// and at distance 1 from anything else.
pub fn cosine_distance(u: &State, v: &State) -> Result<f64, ReplayError> {
    if u.dim() != v.dim() {
        return Err(ReplayError::Dimension(u.dim(), v.dim()));
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    let nu = u.0.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.0.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(match (nu == 0.0, nv == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => (1.0 - dot / (nu * nv)).clamp(0.0, 2.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub valid: bool,
    pub deviations: usize,
    pub deviation_distances: Vec<f64>,
    pub observed_fault: bool,
    /// What actually ran: states the agent acted on, with live rewards.
    pub executed: Episode,
}

impl ExecutionOutcome {
    /// Counts as a confirmed fault only when valid and the boundary was crossed.
    pub fn confirmed_fault(&self) -> bool {
        self.valid && self.observed_fault
    }
}

pub fn replay_episode(e: &Episode, net: &QNetwork, env_config: &EnvConfig) -> Result<ExecutionOutcome, ReplayError> {
    let first = e.steps.first().ok_or_else(|| ReplayError::EmptyEpisode(e.id.clone()))?;
    let mut env = Environment::new(env_config.clone())?;
    env.set_state(&first.state)?;
    let mut steps = Vec::with_capacity(e.len());
    let mut distances = Vec::new();
    let mut valid = true;
    let mut terminal = first.state.clone();
    let mut cause = TerminationCause::None;

    for recorded in &e.steps {
        let mut state = env.state().clone();
        if net.select_action(&state)? != recorded.action {
            distances.push(cosine_distance(&state, &recorded.state)?);
            env.set_state(&recorded.state)?;
            state = recorded.state.clone();
            if net.select_action(&state)? != recorded.action {
                valid = false;
                terminal = state;
                break;
            }
        }
        let out = env.step(recorded.action)?;
        steps.push(Step {
            state,
            action: recorded.action,
            reward: out.reward,
        });
        terminal = out.next_state;
        if out.terminated {
            cause = out.termination_cause;
            break;
        }
    }

    let executed = Episode::new(e.id.clone(), e.origin, e.env, steps, terminal, cause);
    Ok(ExecutionOutcome {
        valid,
        deviations: distances.len(),
        deviation_distances: distances,
        observed_fault: executed.fault,
        executed,
    })
}

/// Bins of width 0.1 over the cosine-distance range [0, 2].
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub episodes: usize,
    pub valid: usize,
    pub invalid: usize,
    pub confirmed_faults: usize,
    pub deviations: usize,
    pub deviation_histogram: Vec<usize>,
    /// `None` when no deviation happened.
    pub fraction_below_quarter: Option<f64>,
}

pub fn summarize(outcomes: &[ExecutionOutcome]) -> ValidationReport {
    let mut histogram = vec![0usize; HISTOGRAM_BINS];
    let mut below = 0usize;
    let mut deviations = 0usize;
    for d in outcomes.iter().flat_map(|o| &o.deviation_distances) {
        deviations += 1;
        let bin = ((d * 10.0).floor() as usize).min(HISTOGRAM_BINS - 1);
        histogram[bin] += 1;
        if *d < 0.25 {
            below += 1;
        }
    }
    let valid = outcomes.iter().filter(|o| o.valid).count();
    ValidationReport {
        episodes: outcomes.len(),
        valid,
        invalid: outcomes.len() - valid,
        confirmed_faults: outcomes.iter().filter(|o| o.confirmed_fault()).count(),
        deviations,
        deviation_histogram: histogram,
        fraction_below_quarter: (deviations > 0).then(|| below as f64 / deviations as f64),
    }
}

/// Replays every episode in parallel; outcomes keep input order.
pub fn validate(
    episodes: &[Episode],
    net: &QNetwork,
    env_config: &EnvConfig,
) -> Result<(Vec<ExecutionOutcome>, ValidationReport), ReplayError> {
    let outcomes = episodes
        .par_iter()
        .map(|e| replay_episode(e, net, env_config))
        .collect::<Result<Vec<_>, _>>()?;
    let report = summarize(&outcomes);
    Ok((outcomes, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Activation, Dense};
    use crate::env::EnvKind;
    use crate::episode::{run_random_episodes, Origin};
    use crate::rng::seeded;

    fn s(v: &[f64]) -> State {
        State(v.to_vec())
    }

    #[test]
    fn cosine_closed_forms() {
        assert!(cosine_distance(&s(&[1.0, 2.0]), &s(&[1.0, 2.0])).unwrap().abs() < 1e-15);
        assert_eq!(cosine_distance(&s(&[1.0, 0.0]), &s(&[0.0, 3.0])).unwrap(), 1.0);
        let d = cosine_distance(&s(&[1.0, 0.0]), &s(&[1.0, 1.0])).unwrap();
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(cosine_distance(&s(&[0.0, 0.0]), &s(&[0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(cosine_distance(&s(&[0.0, 0.0]), &s(&[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(cosine_distance(&s(&[1.0, 0.0]), &s(&[-1.0, 0.0])).unwrap(), 2.0);
        assert!(cosine_distance(&s(&[1.0]), &s(&[1.0, 0.0])).is_err());
    }

    /// Pushes right when the pole leans right: a crude balancing policy.
    fn lean_policy() -> QNetwork {
        QNetwork::new(vec![Dense {
            inputs: 4,
            outputs: 2,
            activation: Activation::Identity,
            weights: vec![0.0, 0.0, -1.0, -0.3, 0.0, 0.0, 1.0, 0.3],
            bias: vec![0.0, 0.0],
        }])
        .unwrap()
    }

    #[test]
    fn own_executions_replay_cleanly() {
        let env = EnvConfig::cart_pole();
        let net = lean_policy();
        let episodes = run_random_episodes(&env, &net, 30, &mut seeded(4), "r").unwrap();
        let (outcomes, report) = validate(&episodes, &net, &env).unwrap();
        assert_eq!(report.valid, 30);
        assert_eq!(report.deviations, 0);
        assert_eq!(report.fraction_below_quarter, None);
        for (o, e) in outcomes.iter().zip(&episodes) {
            assert_eq!(o.executed.steps, e.steps);
            assert_eq!(o.executed.accumulated_reward, e.accumulated_reward);
            assert_eq!(o.observed_fault, e.fault);
        }
    }

    #[test]
    fn wrong_action_is_invalid() {
        let env = EnvConfig::cart_pole();
        let net = lean_policy();
        let mut e = run_random_episodes(&env, &net, 1, &mut seeded(1), "r").unwrap().remove(0);
        e.steps[3].action = 1 - e.steps[3].action;
        let out = replay_episode(&e, &net, &env).unwrap();
        assert!(!out.valid);
        assert_eq!(out.deviations, 1);
        assert_eq!(out.deviation_distances, vec![0.0]);
        assert_eq!(out.executed.len(), 3);
        assert!(!out.confirmed_fault());
    }

    #[test]
    fn replacement_recovers_spliced_states() {
        let env = EnvConfig::cart_pole();
        let net = lean_policy();
        let eps = run_random_episodes(&env, &net, 2, &mut seeded(9), "r").unwrap();
        let mut steps = eps[0].steps[..5].to_vec();
        steps.extend_from_slice(&eps[1].steps[5..]);
        let spliced = Episode::new(
            "x",
            Origin::Crossover,
            EnvKind::CartPole,
            steps,
            eps[1].terminal_state.clone(),
            eps[1].termination_cause,
        );
        let out = replay_episode(&spliced, &net, &env).unwrap();
        assert!(out.valid);
        assert!(out.deviations <= spliced.len());
        // replaying the execution reproduces it
        let again = replay_episode(&out.executed, &net, &env).unwrap();
        assert_eq!(again.executed, out.executed);
        assert_eq!(again.deviations, out.deviations);
    }

    #[test]
    fn histogram_bins() {
        let mk = |d: Vec<f64>| ExecutionOutcome {
            valid: true,
            deviations: d.len(),
            deviation_distances: d,
            observed_fault: false,
            executed: Episode::new("e", Origin::Random, EnvKind::CartPole, vec![], s(&[0.0; 4]), TerminationCause::None),
        };
        let r = summarize(&[mk(vec![0.05, 0.24, 0.3]), mk(vec![2.0])]);
        assert_eq!(r.deviations, 4);
        assert_eq!(r.deviation_histogram[0], 1);
        assert_eq!(r.deviation_histogram[2], 1);
        assert_eq!(r.deviation_histogram[3], 1);
        assert_eq!(r.deviation_histogram[19], 1);
        assert_eq!(r.fraction_below_quarter, Some(0.5));
    }
}
