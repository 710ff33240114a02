//! Seedable Cart-Pole and Mountain Car simulations.
//!
//! Both environments are deterministic given their current state: all
//! randomness lives in [`Environment::reset`] and [`perturb_state`], which
//! draw from a caller-supplied RNG stream. This is what makes episode
//! replay and state replacement meaningful.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("state has {got} features, environment expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("state feature {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("action {action} is invalid, environment has {count} actions")]
    InvalidAction { action: usize, count: usize },
    #[error("step called on a terminated episode")]
    Terminated,
    #[error("invalid environment config: {0}")]
    Config(String),
}

/// Concrete environment observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(pub Vec<f64>);

impl State {
    pub fn new(features: Vec<f64>) -> Self {
        State(features)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for State {
    fn from(v: Vec<f64>) -> Self {
        State(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    CartPole,
    MountainCar,
}

impl EnvKind {
    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::CartPole => 4,
            EnvKind::MountainCar => 2,
        }
    }

    pub fn action_count(self) -> usize {
        match self {
            EnvKind::CartPole => 2,
            EnvKind::MountainCar => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            EnvKind::CartPole => "cart_pole",
            EnvKind::MountainCar => "mountain_car",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    None,
    TimeLimit,
    Goal,
    AngleLimit,
    BoundaryFault,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: State,
    pub reward: f64,
    pub terminated: bool,
    pub termination_cause: TerminationCause,
}

/// A functional fault is a boundary crossing; every other termination is
/// expected behaviour.
pub fn is_functional_fault(outcome: &StepOutcome) -> bool {
    outcome.termination_cause == TerminationCause::BoundaryFault
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_pole_length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub x_threshold: f64,
    pub theta_threshold: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_pole_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            x_threshold: 2.4,
            theta_threshold: 12.0 * std::f64::consts::PI / 180.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MountainCarParams {
    pub force: f64,
    pub gravity: f64,
    pub min_position: f64,
    pub max_position: f64,
    pub max_speed: f64,
    pub goal_position: f64,
    /// When set, a left-border crash is charged the steps it skipped, so the
    /// episode total equals the worst reachable reward (`-max_steps`).
    pub crash_charges_remaining: bool,
}

impl Default for MountainCarParams {
    fn default() -> Self {
        MountainCarParams {
            force: 0.001,
            gravity: 0.0025,
            min_position: -1.2,
            max_position: 0.6,
            max_speed: 0.07,
            goal_position: 0.5,
            crash_charges_remaining: true,
        }
    }
}

// Velocity bounds used only for the Cart-Pole perturbation box; the
// dynamics themselves are unbounded in these features.
const CART_VELOCITY_BOUND: f64 = 3.0;
const POLE_VELOCITY_BOUND: f64 = 3.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Per-feature `[low, high]` initial-state ranges. `None` uses the
    /// benchmark defaults.
    #[serde(default)]
    pub init_ranges: Option<Vec<[f64; 2]>>,
    /// Per-feature mutation magnitudes. `None` uses 5% of each feature's span.
    #[serde(default)]
    pub perturbation: Option<Vec<f64>>,
    #[serde(default)]
    pub cart_pole: CartPoleParams,
    #[serde(default)]
    pub mountain_car: MountainCarParams,
}

fn default_max_steps() -> usize {
    200
}

impl EnvConfig {
    pub fn cart_pole() -> Self {
        EnvConfig {
            kind: EnvKind::CartPole,
            max_steps: 200,
            init_ranges: None,
            perturbation: None,
            cart_pole: CartPoleParams::default(),
            mountain_car: MountainCarParams::default(),
        }
    }

    pub fn mountain_car() -> Self {
        EnvConfig {
            kind: EnvKind::MountainCar,
            ..EnvConfig::cart_pole()
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.kind.obs_dim()
    }

    pub fn action_count(&self) -> usize {
        self.kind.action_count()
    }

    pub fn init_ranges(&self) -> Vec<[f64; 2]> {
        if let Some(r) = &self.init_ranges {
            return r.clone();
        }
        match self.kind {
            EnvKind::CartPole => vec![[-0.05, 0.05]; 4],
            EnvKind::MountainCar => vec![[-0.6, -0.4], [0.0, 0.0]],
        }
    }

    /// Physically valid feature box used to clamp perturbed states.
    pub fn feature_box(&self) -> Vec<[f64; 2]> {
        match self.kind {
            EnvKind::CartPole => {
                let p = &self.cart_pole;
                vec![
                    [-p.x_threshold, p.x_threshold],
                    [-CART_VELOCITY_BOUND, CART_VELOCITY_BOUND],
                    [-p.theta_threshold, p.theta_threshold],
                    [-POLE_VELOCITY_BOUND, POLE_VELOCITY_BOUND],
                ]
            }
            EnvKind::MountainCar => {
                let p = &self.mountain_car;
                vec![
                    [p.min_position, p.max_position],
                    [-p.max_speed, p.max_speed],
                ]
            }
        }
    }

    pub fn perturbation(&self) -> Vec<f64> {
        if let Some(p) = &self.perturbation {
            return p.clone();
        }
        self.feature_box()
            .iter()
            .map(|[lo, hi]| 0.05 * (hi - lo))
            .collect()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.max_steps == 0 {
            return Err(EnvError::Config("max_steps must be positive".into()));
        }
        let ranges = self.init_ranges();
        if ranges.len() != self.obs_dim() {
            return Err(EnvError::Config(format!(
                "init_ranges has {} entries, expected {}",
                ranges.len(),
                self.obs_dim()
            )));
        }
        for (i, [lo, hi]) in ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(EnvError::Config(format!("init range {i} is empty: [{lo}, {hi}]")));
            }
        }
        let mags = self.perturbation();
        if mags.len() != self.obs_dim() || mags.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(EnvError::Config(
                "perturbation magnitudes must be non-negative, one per feature".into(),
            ));
        }
        Ok(())
    }

    /// Post-hoc boundary predicate on a stored state.
    pub fn violates_boundary(&self, s: &State) -> bool {
        match self.kind {
            EnvKind::CartPole => s.0[0].abs() > self.cart_pole.x_threshold,
            EnvKind::MountainCar => s.0[0] <= self.mountain_car.min_position,
        }
    }

    pub fn check_state(&self, s: &State) -> Result<(), EnvError> {
        if s.dim() != self.obs_dim() {
            return Err(EnvError::Dimension {
                expected: self.obs_dim(),
                got: s.dim(),
            });
        }
        if let Some((index, &value)) = s.0.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(EnvError::NonFinite { index, value });
        }
        Ok(())
    }
}

/// One environment instance. Single-threaded; create one per worker.
#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    state: State,
    elapsed: usize,
    terminated: bool,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let state = State(vec![0.0; config.obs_dim()]);
        Ok(Environment {
            config,
            state,
            elapsed: 0,
            terminated: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn elapsed(&self) -> usize {
        self.elapsed
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> State {
        let features = self
            .config
            .init_ranges()
            .iter()
            .map(|&[lo, hi]| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
            .collect();
        self.state = State(features);
        self.elapsed = 0;
        self.terminated = false;
        self.state.clone()
    }

    /// Overwrites the current state. The step counter is left untouched.
    pub fn set_state(&mut self, s: &State) -> Result<(), EnvError> {
        self.config.check_state(s)?;
        self.state = s.clone();
        self.terminated = false;
        Ok(())
    }

    /// Positions the time-limit counter, used when resuming mid-episode.
    pub fn set_elapsed(&mut self, steps: usize) {
        self.elapsed = steps;
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        let count = self.config.action_count();
        if action >= count {
            return Err(EnvError::InvalidAction { action, count });
        }
        if self.terminated {
            return Err(EnvError::Terminated);
        }
        self.elapsed += 1;
        let (next, reward, cause) = match self.config.kind {
            EnvKind::CartPole => self.cart_pole_step(action),
            EnvKind::MountainCar => self.mountain_car_step(action),
        };
        let cause = if cause == TerminationCause::None && self.elapsed >= self.config.max_steps {
            TerminationCause::TimeLimit
        } else {
            cause
        };
        self.state = next.clone();
        self.terminated = cause != TerminationCause::None;
        Ok(StepOutcome {
            next_state: next,
            reward,
            terminated: self.terminated,
            termination_cause: cause,
        })
    }

    fn cart_pole_step(&self, action: usize) -> (State, f64, TerminationCause) {
        let p = &self.config.cart_pole;
        let [x, x_dot, theta, theta_dot] = [self.state.0[0], self.state.0[1], self.state.0[2], self.state.0[3]];
        let force = if action == 1 { p.force_mag } else { -p.force_mag };
        let total_mass = p.cart_mass + p.pole_mass;
        let pole_mass_length = p.pole_mass * p.half_pole_length;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pole_mass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (p.gravity * sin - cos * temp)
            / (p.half_pole_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;

        let next = [
            x + p.tau * x_dot,
            x_dot + p.tau * x_acc,
            theta + p.tau * theta_dot,
            theta_dot + p.tau * theta_acc,
        ];
        let cause = if next[0].abs() > p.x_threshold {
            TerminationCause::BoundaryFault
        } else if next[2].abs() > p.theta_threshold {
            TerminationCause::AngleLimit
        } else {
            TerminationCause::None
        };
        (State(next.to_vec()), 1.0, cause)
    }

    fn mountain_car_step(&self, action: usize) -> (State, f64, TerminationCause) {
        let p = &self.config.mountain_car;
        let (x, v) = (self.state.0[0], self.state.0[1]);
        let mut velocity = v + (action as f64 - 1.0) * p.force - p.gravity * (3.0 * x).cos();
        velocity = velocity.clamp(-p.max_speed, p.max_speed);
        let mut position = (x + velocity).clamp(p.min_position, p.max_position);
        if position <= p.min_position && velocity < 0.0 {
            position = p.min_position;
            velocity = 0.0;
        }
        let mut reward = -1.0;
        let cause = if position <= p.min_position {
            if p.crash_charges_remaining {
                reward = -((self.config.max_steps.saturating_sub(self.elapsed) + 1) as f64);
            }
            TerminationCause::BoundaryFault
        } else if position >= p.goal_position {
            TerminationCause::Goal
        } else {
            TerminationCause::None
        };
        (State(vec![position, velocity]), reward, cause)
    }
}

/// Adds bounded uniform noise to `s` and clamps into the valid feature box.
pub fn perturb_state<R: Rng + ?Sized>(
    config: &EnvConfig,
    s: &State,
    magnitudes: &[f64],
    rng: &mut R,
) -> Result<State, EnvError> {
    config.check_state(s)?;
    if magnitudes.len() != s.dim() {
        return Err(EnvError::Dimension {
            expected: s.dim(),
            got: magnitudes.len(),
        });
    }
    let bounds = config.feature_box();
    let out = s
        .0
        .iter()
        .zip(magnitudes)
        .zip(&bounds)
        .map(|((&v, &m), &[lo, hi])| {
            let noise = if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
            (v + noise).clamp(lo.min(v), hi.max(v))
        })
        .collect();
    Ok(State(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn degenerate_reset_range() {
        let mut cfg = EnvConfig::cart_pole();
        cfg.init_ranges = Some(vec![[0.0, 0.0]; 4]);
        let mut env = Environment::new(cfg).unwrap();
        let s = env.reset(&mut seeded(1));
        assert_eq!(s.0, vec![0.0; 4]);
        assert_eq!(env.elapsed(), 0);
    }

    #[test]
    fn reset_is_seed_deterministic() {
        let mut a = Environment::new(EnvConfig::cart_pole()).unwrap();
        let mut b = Environment::new(EnvConfig::cart_pole()).unwrap();
        assert_eq!(a.reset(&mut seeded(9)), b.reset(&mut seeded(9)));
    }

    #[test]
    fn mountain_car_reset_ranges() {
        let mut env = Environment::new(EnvConfig::mountain_car()).unwrap();
        let mut rng = seeded(3);
        for _ in 0..1000 {
            let s = env.reset(&mut rng);
            assert!((-0.6..=-0.4).contains(&s.0[0]));
            assert_eq!(s.0[1], 0.0);
        }
    }

    #[test]
    fn set_state_contract() {
        let mut env = Environment::new(EnvConfig::cart_pole()).unwrap();
        let s = State(vec![0.1, -0.2, 0.03, 0.4]);
        env.set_state(&s).unwrap();
        assert_eq!(env.state(), &s);

        let mut fresh = Environment::new(EnvConfig::cart_pole()).unwrap();
        fresh.set_state(&s).unwrap();
        env.reset(&mut seeded(0));
        env.set_state(&s).unwrap();
        assert_eq!(env.step(1).unwrap(), fresh.step(1).unwrap());

        assert_eq!(
            env.set_state(&State(vec![0.0; 3])),
            Err(EnvError::Dimension { expected: 4, got: 3 })
        );
        assert!(matches!(
            env.set_state(&State(vec![0.0, f64::NAN, 0.0, 0.0])),
            Err(EnvError::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn cart_pole_euler_step() {
        let mut env = Environment::new(EnvConfig::cart_pole()).unwrap();
        env.set_state(&State(vec![0.0; 4])).unwrap();
        let out = env.step(1).unwrap();
        // temp = 10/1.1, theta_acc = -temp / (0.5 * (4/3 - 0.1/1.1)),
        // x_acc = temp - 0.05 * theta_acc / 1.1
        let temp = 10.0 / 1.1;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        let expected = [0.0, 0.02 * x_acc, 0.0, 0.02 * theta_acc];
        for (got, want) in out.next_state.0.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((out.next_state.0[1] - 0.19512).abs() < 1e-5);
        assert!((out.next_state.0[3] + 0.29268).abs() < 1e-5);
        assert_eq!(out.reward, 1.0);
        assert!(!out.terminated);
        assert_eq!(out.termination_cause, TerminationCause::None);
    }

    #[test]
    fn mountain_car_step_values() {
        let mut env = Environment::new(EnvConfig::mountain_car()).unwrap();
        env.set_state(&State(vec![-0.5, 0.0])).unwrap();
        let out = env.step(2).unwrap();
        let v = 0.001 - 0.0025 * (-1.5f64).cos();
        assert!((out.next_state.0[1] - v).abs() < 1e-12);
        assert!((out.next_state.0[0] - (-0.5 + v)).abs() < 1e-12);
        assert!((v - 0.0008232).abs() < 1e-7);
        assert_eq!(out.reward, -1.0);
    }

    #[test]
    fn cart_pole_boundary_fault_both_sides() {
        for x in [2.395, -2.395] {
            let mut env = Environment::new(EnvConfig::cart_pole()).unwrap();
            env.set_state(&State(vec![x, x.signum() * 2.5, 0.0, 0.0])).unwrap();
            let out = env.step(if x > 0.0 { 1 } else { 0 }).unwrap();
            assert!(out.next_state.0[0].abs() > 2.4);
            assert_eq!(out.termination_cause, TerminationCause::BoundaryFault);
            assert!(is_functional_fault(&out));
        }
    }

    #[test]
    fn angle_limit_is_not_a_fault() {
        let mut env = Environment::new(EnvConfig::cart_pole()).unwrap();
        env.set_state(&State(vec![0.0, 0.0, 0.2, 1.0])).unwrap();
        let out = env.step(0).unwrap();
        assert_eq!(out.termination_cause, TerminationCause::AngleLimit);
        assert!(!is_functional_fault(&out));
    }

    #[test]
    fn mountain_car_left_border() {
        let mut env = Environment::new(EnvConfig::mountain_car()).unwrap();
        env.set_state(&State(vec![-1.19, -0.02])).unwrap();
        let out = env.step(0).unwrap();
        assert_eq!(out.termination_cause, TerminationCause::BoundaryFault);
        assert_eq!(out.next_state.0[0], -1.2);
        assert!(env.config().violates_boundary(&out.next_state));
        // first step of a 200-step budget: charged the full budget
        assert_eq!(out.reward, -200.0);
    }

    #[test]
    fn time_limit_and_step_after_termination() {
        let mut cfg = EnvConfig::mountain_car();
        cfg.max_steps = 3;
        let mut env = Environment::new(cfg).unwrap();
        env.reset(&mut seeded(0));
        let causes: Vec<_> = (0..3).map(|_| env.step(1).unwrap().termination_cause).collect();
        assert_eq!(causes[2], TerminationCause::TimeLimit);
        assert_eq!(env.step(1), Err(EnvError::Terminated));
        assert!(!is_functional_fault(&StepOutcome {
            next_state: State(vec![0.0, 0.0]),
            reward: -1.0,
            terminated: true,
            termination_cause: TerminationCause::TimeLimit,
        }));
    }

    #[test]
    fn invalid_action() {
        let mut env = Environment::new(EnvConfig::cart_pole()).unwrap();
        assert_eq!(env.step(2), Err(EnvError::InvalidAction { action: 2, count: 2 }));
    }

    #[test]
    fn perturbation_bounds() {
        let cfg = EnvConfig::cart_pole();
        let s = State(vec![0.1, 0.2, -0.05, 0.3]);
        let mut rng = seeded(5);
        assert_eq!(perturb_state(&cfg, &s, &[0.0; 4], &mut rng).unwrap(), s);
        let mags = cfg.perturbation();
        for _ in 0..10_000 {
            let p = perturb_state(&cfg, &s, &mags, &mut rng).unwrap();
            for i in 0..4 {
                assert!((p.0[i] - s.0[i]).abs() <= mags[i]);
            }
        }
        assert!(perturb_state(&cfg, &s, &[0.1; 3], &mut rng).is_err());
    }

    #[test]
    fn mountain_car_velocity_clamp() {
        let cfg = EnvConfig::mountain_car();
        let s = State(vec![-0.5, 0.069]);
        let mut rng = seeded(11);
        let mut hit = false;
        for _ in 0..1000 {
            let p = perturb_state(&cfg, &s, &[0.0, 0.01], &mut rng).unwrap();
            assert!(p.0[1] <= 0.07);
            hit |= p.0[1] == 0.07;
        }
        assert!(hit);
    }
}
