//! Many-objective genetic search over episodes.
//!
//! Individuals are episodes scored on three minimised objectives: the
//! accumulated reward, one minus the surrogate fault probability, and the
//! mean action-certainty margin. Ranking follows MOSA: the best individual
//! per objective gets rank 0, everyone else is ranked by non-dominated
//! sorting from rank 1. Every individual that meets at least one objective
//! threshold is kept in an append-only archive.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::abstraction::{abstract_key, AbstractKey, AbstractionError, AbstractionIndex};
use crate::agent::{softmax, AgentError, QNetwork};
use crate::classifier::{ClassifierError, FaultForest};
use crate::env::{perturb_state, EnvConfig, EnvError, Environment};
use crate::episode::{rollout_greedy, Episode, EpisodeError, FeatureVector, Origin};
use crate::rng::{seeded, StageRng};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("initial population is empty")]
    EmptyPopulation,
    #[error("episode {0} has no steps")]
    EmptyEpisode(String),
    #[error("invalid search config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
}

/// Objective values, all minimised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub reward: f64,
    pub fault_prob: f64,
    pub certainty: f64,
}

impl Fitness {
    pub fn objectives(&self) -> [f64; 3] {
        [self.reward, self.fault_prob, self.certainty]
    }
}

pub fn fitness_reward(e: &Episode) -> f64 {
    e.accumulated_reward
}

/// Recorded action's probability minus the best other action's.
pub fn certainty_margin(probs: &[f64], action: usize) -> f64 {
    let runner_up = probs
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != action)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    if runner_up == f64::NEG_INFINITY {
        probs[action]
    } else {
        probs[action] - runner_up
    }
}

pub fn fitness_certainty(e: &Episode, net: &QNetwork, temperature: f64) -> Result<f64, SearchError> {
    if e.is_empty() {
        return Err(SearchError::EmptyEpisode(e.id.clone()));
    }
    let mut total = 0.0;
    for step in &e.steps {
        total += certainty_margin(&net.action_probabilities(&step.state, temperature)?, step.action);
    }
    Ok(total / e.len() as f64)
}

pub fn fitness_fault_prob(
    e: &Episode,
    forest: &FaultForest,
    index: &AbstractionIndex,
    net: &QNetwork,
) -> Result<f64, SearchError> {
    let x = crate::episode::encode_features(e, index, net)?;
    Ok(1.0 - forest.predict_fault_probability(&x)?)
}

/// Frozen models the search evaluates against.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub env: &'a EnvConfig,
    pub net: &'a QNetwork,
    pub forest: &'a FaultForest,
    pub index: &'a AbstractionIndex,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub episode: Episode,
    pub fitness: Fitness,
    pub features: FeatureVector,
    /// Abstract key of every step's state.
    pub keys: Vec<AbstractKey>,
}

impl SearchContext<'_> {
    /// Scores an episode. One forward pass per state feeds the abstract key,
    /// the feature vector and the certainty margin.
    pub fn evaluate(&self, episode: Episode) -> Result<Individual, SearchError> {
        if episode.is_empty() {
            return Err(SearchError::EmptyEpisode(episode.id.clone()));
        }
        let mut keys = Vec::with_capacity(episode.len());
        let mut ids = Vec::new();
        let mut margin = 0.0;
        for step in &episode.steps {
            let q = self.net.q_values(&step.state)?;
            let key = abstract_key(&q, self.index.level())?;
            if let Some(id) = self.index.lookup(&key) {
                ids.push(id);
            }
            keys.push(key);
            margin += certainty_margin(&softmax(&q, self.temperature)?, step.action);
        }
        let features = FeatureVector::from_ids(self.index.len(), ids);
        let fault_probability = self.forest.predict_fault_probability(&features)?;
        let fitness = Fitness {
            reward: fitness_reward(&episode),
            fault_prob: 1.0 - fault_probability,
            certainty: margin / episode.len() as f64,
        };
        Ok(Individual {
            episode,
            fitness,
            features,
            keys,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessThresholds {
    /// Reward objective met when `f1 <= reward_max`.
    pub reward_max: f64,
    /// Fault objective met when the predicted fault probability `1 - f2 >= fault_prob_min`.
    pub fault_prob_min: f64,
    /// Certainty objective met when `f3 <= certainty_max`.
    pub certainty_max: f64,
}

impl FitnessThresholds {
    pub fn cart_pole() -> Self {
        FitnessThresholds {
            reward_max: 70.0,
            fault_prob_min: 0.95,
            certainty_max: 0.04,
        }
    }

    pub fn mountain_car() -> Self {
        FitnessThresholds {
            reward_max: -180.0,
            ..Self::cart_pole()
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if !(self.fault_prob_min > 0.0 && self.fault_prob_min <= 1.0) {
            return Err(SearchError::Config("fault_prob_min must lie in (0, 1]".into()));
        }
        if !(self.certainty_max >= 0.0) || !self.reward_max.is_finite() {
            return Err(SearchError::Config("thresholds must be finite, certainty_max >= 0".into()));
        }
        Ok(())
    }

    pub fn satisfied(&self, f: &Fitness) -> Satisfied {
        Satisfied {
            reward: f.reward <= self.reward_max,
            fault_prob: 1.0 - f.fault_prob >= self.fault_prob_min,
            certainty: f.certainty <= self.certainty_max,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Satisfied {
    pub reward: bool,
    pub fault_prob: bool,
    pub certainty: bool,
}

impl Satisfied {
    pub fn any(&self) -> bool {
        self.reward || self.fault_prob || self.certainty
    }

    pub fn merge(&mut self, other: Satisfied) {
        self.reward |= other.reward;
        self.fault_prob |= other.fault_prob;
        self.certainty |= other.certainty;
    }

    pub fn all(&self) -> bool {
        self.reward && self.fault_prob && self.certainty
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub rank: Vec<usize>,
    pub crowding: Vec<f64>,
}

pub fn dominates(a: &[f64; 3], b: &[f64; 3]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// MOSA preference ranking plus per-front crowding distances.
pub fn mosa_rank(objectives: &[[f64; 3]]) -> Ranking {
    let n = objectives.len();
    let mut rank = vec![usize::MAX; n];
    for m in 0..3 {
        let best = objectives.iter().map(|o| o[m]).fold(f64::INFINITY, f64::min);
        for (i, o) in objectives.iter().enumerate() {
            if o[m] == best {
                rank[i] = 0;
            }
        }
    }

    // Fast non-dominated sort over everyone not already preferred.
    let rest: Vec<usize> = (0..n).filter(|&i| rank[i] != 0).collect();
    let mut dominated_by_count = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (a_pos, &a) in rest.iter().enumerate() {
        for &b in &rest[a_pos + 1..] {
            if dominates(&objectives[a], &objectives[b]) {
                dominates_list[a].push(b);
                dominated_by_count[b] += 1;
            } else if dominates(&objectives[b], &objectives[a]) {
                dominates_list[b].push(a);
                dominated_by_count[a] += 1;
            }
        }
    }
    let mut front: Vec<usize> = rest.iter().copied().filter(|&i| dominated_by_count[i] == 0).collect();
    let mut r = 1;
    while !front.is_empty() {
        let mut next = Vec::new();
        for &i in &front {
            rank[i] = r;
            for &j in &dominates_list[i] {
                dominated_by_count[j] -= 1;
                if dominated_by_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        front = next;
        r += 1;
    }

    let mut crowding = vec![0.0; n];
    let max_rank = rank.iter().copied().max().unwrap_or(0);
    for r in 0..=max_rank {
        let members: Vec<usize> = (0..n).filter(|&i| rank[i] == r).collect();
        crowding_distance(objectives, &members, &mut crowding);
    }
    Ranking { rank, crowding }
}

fn crowding_distance(objectives: &[[f64; 3]], members: &[usize], out: &mut [f64]) {
    if members.len() <= 2 {
        for &i in members {
            out[i] = f64::INFINITY;
        }
        return;
    }
    for m in 0..3 {
        let mut sorted = members.to_vec();
        sorted.sort_by(|&a, &b| objectives[a][m].total_cmp(&objectives[b][m]).then(a.cmp(&b)));
        let lo = objectives[sorted[0]][m];
        let hi = objectives[sorted[sorted.len() - 1]][m];
        out[sorted[0]] = f64::INFINITY;
        out[sorted[sorted.len() - 1]] = f64::INFINITY;
        if hi == lo {
            continue;
        }
        for w in sorted.windows(3) {
            out[w[1]] += (objectives[w[2]][m] - objectives[w[0]][m]) / (hi - lo);
        }
    }
}

/// K-way tournament: lowest rank wins, then larger crowding distance, then
/// the earliest-drawn entrant.
pub fn tournament_select(ranking: &Ranking, k: usize, rng: &mut StageRng) -> usize {
    let n = ranking.rank.len();
    let mut winner = rng.gen_range(0..n);
    for _ in 1..k {
        let c = rng.gen_range(0..n);
        let better = ranking.rank[c] < ranking.rank[winner]
            || (ranking.rank[c] == ranking.rank[winner] && ranking.crowding[c] > ranking.crowding[winner]);
        if better {
            winner = c;
        }
    }
    winner
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// `None` keeps the size of the initial population.
    pub population_size: Option<usize>,
    pub max_generations: usize,
    pub crossover_rate: f64,
    pub tournament_size: usize,
    /// Failed (parent, point) attempts before a crossover gives up.
    pub match_retries: usize,
    /// Crossover trials per generation, each firing with `crossover_rate`.
    pub crossovers_per_generation: usize,
    pub mutations_per_generation: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population_size: None,
            max_generations: 10,
            crossover_rate: 0.75,
            tournament_size: 2,
            match_retries: 50,
            crossovers_per_generation: 1,
            mutations_per_generation: 1,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(SearchError::Config("crossover_rate must lie in [0, 1]".into()));
        }
        if self.max_generations == 0 {
            return Err(SearchError::Config("max_generations must be at least 1".into()));
        }
        if self.tournament_size < 2 {
            return Err(SearchError::Config("tournament_size must be at least 2".into()));
        }
        if self.population_size == Some(0) {
            return Err(SearchError::Config("population_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splice {
    pub parent: usize,
    pub parent_point: usize,
    pub donor: usize,
    pub donor_point: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CrossoverOutcome {
    /// `(parent prefix + donor suffix, donor prefix + parent suffix)`.
    Offspring(Episode, Episode, Splice),
    NoMatch,
}

/// Builds the two splices of `parent` at `f` and `donor` at `v`.
pub fn splice(parent: &Episode, f: usize, donor: &Episode, v: usize, ids: (String, String)) -> (Episode, Episode) {
    let mut a = parent.steps[..f].to_vec();
    a.extend_from_slice(&donor.steps[v..]);
    let mut b = donor.steps[..v].to_vec();
    b.extend_from_slice(&parent.steps[f..]);
    (
        Episode::new(ids.0, Origin::Crossover, parent.env, a, donor.terminal_state.clone(), donor.termination_cause),
        Episode::new(ids.1, Origin::Crossover, parent.env, b, parent.terminal_state.clone(), parent.termination_cause),
    )
}

/// Abstract-state matched crossover. The parent is tournament-selected, the
/// crossover point is uniform, and the donor is the first individual in a
/// random scan that holds a step with the same abstract key at a position
/// that keeps both offspring within `max_steps`.
pub fn crossover(
    pop: &[Individual],
    ranking: &Ranking,
    config: &SearchConfig,
    max_steps: usize,
    rng: &mut StageRng,
    ids: (String, String),
) -> CrossoverOutcome {
    let mut order: Vec<usize> = (0..pop.len()).collect();
    for _ in 0..config.match_retries.max(1) {
        let p = tournament_select(ranking, config.tournament_size, rng);
        let parent = &pop[p];
        let m = parent.episode.len();
        let f = rng.gen_range(0..m);
        let key = &parent.keys[f];
        order.shuffle(rng);
        for &d in &order {
            if d == p {
                continue;
            }
            let donor = &pop[d];
            let n = donor.episode.len();
            let spots: Vec<usize> = donor
                .keys
                .iter()
                .enumerate()
                .filter(|&(v, k)| k == key && f + (n - v) <= max_steps && v + (m - f) <= max_steps)
                .map(|(v, _)| v)
                .collect();
            if let Some(&v) = spots.choose(rng) {
                let (a, b) = splice(&parent.episode, f, &donor.episode, v, ids);
                return CrossoverOutcome::Offspring(
                    a,
                    b,
                    Splice {
                        parent: p,
                        parent_point: f,
                        donor: d,
                        donor_point: v,
                    },
                );
            }
        }
    }
    CrossoverOutcome::NoMatch
}

/// Perturbs one uniformly chosen state and re-executes the agent from it.
/// The prefix before the mutation point is kept verbatim.
pub fn mutate(
    e: &Episode,
    net: &QNetwork,
    env_config: &EnvConfig,
    magnitudes: &[f64],
    rng: &mut StageRng,
    id: String,
) -> Result<Episode, SearchError> {
    if e.is_empty() {
        return Err(SearchError::EmptyEpisode(e.id.clone()));
    }
    let c = rng.gen_range(0..e.len());
    let perturbed = perturb_state(env_config, &e.steps[c].state, magnitudes, rng)?;
    let mut env = Environment::new(env_config.clone())?;
    env.set_state(&perturbed)?;
    env.set_elapsed(c);
    let mut steps = e.steps[..c].to_vec();
    let (terminal, cause) = rollout_greedy(&mut env, net, &mut steps)?;
    Ok(Episode::new(id, Origin::Mutated, e.env, steps, terminal, cause))
}

/// Content fingerprint: identical step sequences and endings collide.
pub fn fingerprint(e: &Episode) -> String {
    let mut h = Sha256::new();
    for s in &e.steps {
        for v in &s.state.0 {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update((s.action as u64).to_le_bytes());
        h.update(s.reward.to_bits().to_le_bytes());
    }
    for v in &e.terminal_state.0 {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub individual: Individual,
    pub satisfied: Satisfied,
    pub generation: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Archive {
    entries: Vec<ArchiveEntry>,
    seen: HashSet<String>,
    covered: Satisfied,
}

impl Archive {
    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Objectives met by at least one entry.
    pub fn covered(&self) -> Satisfied {
        self.covered
    }

    pub fn into_entries(self) -> Vec<ArchiveEntry> {
        self.entries
    }
}

/// Adds every candidate meeting at least one threshold; duplicates (by
/// content) are skipped and nothing is ever removed.
pub fn update_archive(archive: &mut Archive, candidates: &[Individual], thresholds: &FitnessThresholds, generation: usize) {
    for ind in candidates {
        let sat = thresholds.satisfied(&ind.fitness);
        if !sat.any() {
            continue;
        }
        if archive.seen.insert(fingerprint(&ind.episode)) {
            archive.covered.merge(sat);
            archive.entries.push(ArchiveEntry {
                individual: ind.clone(),
                satisfied: sat,
                generation,
            });
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub generations: usize,
    /// Archive size after each generation.
    pub archive_sizes: Vec<usize>,
    /// Mutated episodes executed in the environment (M).
    pub mutations_executed: usize,
    pub crossover_offspring: usize,
    pub crossover_no_match: usize,
    pub all_objectives_covered: bool,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub archive: Archive,
    pub metrics: RunMetrics,
    pub population: Vec<Individual>,
}

/// `mu + lambda` survivor selection on MOSA rank then crowding distance.
pub fn select_survivors(pool: Vec<Individual>, size: usize) -> Vec<Individual> {
    let objectives: Vec<[f64; 3]> = pool.iter().map(|i| i.fitness.objectives()).collect();
    let ranking = mosa_rank(&objectives);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        ranking.rank[a]
            .cmp(&ranking.rank[b])
            .then(ranking.crowding[b].total_cmp(&ranking.crowding[a]))
            .then(a.cmp(&b))
    });
    order.truncate(size);
    order.sort_unstable();
    let mut keep = vec![false; pool.len()];
    order.iter().for_each(|&i| keep[i] = true);
    pool.into_iter().zip(keep).filter(|(_, k)| *k).map(|(i, _)| i).collect()
}

fn ranking_of(pop: &[Individual]) -> Ranking {
    mosa_rank(&pop.iter().map(|i| i.fitness.objectives()).collect::<Vec<_>>())
}

/// The generational loop. Stops once every objective is met by some archived
/// offspring or after `max_generations`.
pub fn run_search(
    initial: Vec<Episode>,
    ctx: &SearchContext,
    config: &SearchConfig,
    thresholds: &FitnessThresholds,
    run_label: &str,
) -> Result<SearchOutcome, SearchError> {
    config.validate()?;
    thresholds.validate()?;
    if initial.is_empty() {
        return Err(SearchError::EmptyPopulation);
    }
    let mut rng = seeded(config.seed);
    let magnitudes = ctx.env.perturbation();
    let mut pop = initial
        .into_iter()
        .map(|e| ctx.evaluate(e))
        .collect::<Result<Vec<_>, _>>()?;
    let size = config.population_size.unwrap_or(pop.len());
    if pop.len() > size {
        pop = select_survivors(pop, size);
    }

    // Only offspring enter the archive; the initial episodes are inputs, not
    // findings, so the first generation always runs.
    let mut archive = Archive::default();
    let mut metrics = RunMetrics::default();
    let mut serial = 0usize;
    let mut next_id = |tag: &str| {
        serial += 1;
        format!("{run_label}-{tag}{serial}")
    };

    while !archive.covered().all() && metrics.generations < config.max_generations {
        let ranking = ranking_of(&pop);
        let mut offspring: Vec<Individual> = Vec::new();
        for _ in 0..config.crossovers_per_generation {
            if rng.gen::<f64>() >= config.crossover_rate {
                continue;
            }
            let ids = (next_id("x"), next_id("x"));
            match crossover(&pop, &ranking, config, ctx.env.max_steps, &mut rng, ids) {
                CrossoverOutcome::Offspring(a, b, _) => {
                    offspring.push(ctx.evaluate(a)?);
                    offspring.push(ctx.evaluate(b)?);
                    metrics.crossover_offspring += 2;
                }
                CrossoverOutcome::NoMatch => metrics.crossover_no_match += 1,
            }
        }
        for _ in 0..config.mutations_per_generation {
            let mut pool: Vec<&Individual> = pop.iter().chain(&offspring).collect();
            let pool_ranking = mosa_rank(&pool.iter().map(|i| i.fitness.objectives()).collect::<Vec<_>>());
            let pick = tournament_select(&pool_ranking, config.tournament_size, &mut rng);
            let chosen = pool.swap_remove(pick).episode.clone();
            let mutated = mutate(&chosen, ctx.net, ctx.env, &magnitudes, &mut rng, next_id("m"))?;
            metrics.mutations_executed += 1;
            offspring.push(ctx.evaluate(mutated)?);
        }

        metrics.generations += 1;
        update_archive(&mut archive, &offspring, thresholds, metrics.generations);
        metrics.archive_sizes.push(archive.len());
        let mut pool = pop;
        pool.extend(offspring);
        pop = select_survivors(pool, size);
    }
    metrics.all_objectives_covered = archive.covered().all();
    Ok(SearchOutcome {
        archive,
        metrics,
        population: pop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvKind, State, TerminationCause};
    use crate::episode::Step;

    fn episode(id: &str, xs: &[f64]) -> Episode {
        Episode::new(
            id,
            Origin::Random,
            EnvKind::CartPole,
            xs.iter()
                .map(|&x| Step {
                    state: State(vec![x, 0.0, 0.0, 0.0]),
                    action: 0,
                    reward: 1.0,
                })
                .collect(),
            State(vec![9.0, 0.0, 0.0, 0.0]),
            TerminationCause::AngleLimit,
        )
    }

    #[test]
    fn margin_arithmetic() {
        assert!((certainty_margin(&[0.7, 0.2, 0.1], 0) - 0.5).abs() < 1e-12);
        assert_eq!(certainty_margin(&[1.0 / 3.0; 3], 1), 0.0);
    }

    #[test]
    fn certainty_is_mean_margin() {
        // Q = (x, 0) per state; choose x so the two-action softmax margins are 0.5 and 0.3
        let net = QNetwork::new(vec![crate::agent::Dense {
            inputs: 4,
            outputs: 2,
            activation: crate::agent::Activation::Identity,
            weights: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            bias: vec![0.0, 0.0],
        }])
        .unwrap();
        // p0 - p1 = tanh(x / 2) for the two-action softmax
        let x = |m: f64| 2.0 * m.atanh();
        let e = episode("e", &[x(0.5), x(0.3)]);
        assert!((fitness_certainty(&e, &net, 1.0).unwrap() - 0.4).abs() < 1e-12);
        let flat = episode("f", &[0.0, 0.0, 0.0]);
        assert_eq!(fitness_certainty(&flat, &net, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn splice_lengths_and_boundary() {
        let parent = episode("p", &(0..10).map(|i| i as f64).collect::<Vec<_>>());
        let donor = episode("d", &(0..8).map(|i| 100.0 + i as f64).collect::<Vec<_>>());
        let (a, b) = splice(&parent, 4, &donor, 6, ("a".into(), "b".into()));
        assert_eq!((a.len(), b.len()), (6, 12));
        assert_eq!(a.steps[4], donor.steps[6]);
        assert_eq!(&a.steps[..4], &parent.steps[..4]);
        assert_eq!(b.steps[6], parent.steps[4]);
        assert_eq!(a.accumulated_reward, 6.0);
        assert_eq!(a.origin, Origin::Crossover);
    }

    #[test]
    fn per_objective_minimisers_get_rank_zero() {
        let objs = vec![
            [1.0, 5.0, 5.0],
            [5.0, 1.0, 5.0],
            [5.0, 5.0, 1.0],
            [2.0, 2.0, 2.0],
            [3.0, 3.0, 3.0],
            [4.0, 4.0, 4.0],
        ];
        let r = mosa_rank(&objs);
        assert_eq!(r.rank, vec![0, 0, 0, 1, 2, 3]);
    }

    #[test]
    fn tournament_prefers_better_rank() {
        let ranking = Ranking {
            rank: vec![2, 0],
            crowding: vec![1.0, 1.0],
        };
        let mut rng = seeded(0);
        let single = Ranking {
            rank: vec![4],
            crowding: vec![0.0],
        };
        assert_eq!(tournament_select(&single, 2, &mut rng), 0);
        // with K = 2 the rank-0 entrant wins unless both draws hit index 0
        let wins = (0..10_000).filter(|_| tournament_select(&ranking, 2, &mut rng) == 1).count();
        assert!((wins as f64 / 10_000.0 - 0.75).abs() < 0.02);
    }

    #[test]
    fn archive_thresholds() {
        let t = FitnessThresholds::cart_pole();
        let fit = |reward, fault_prob, certainty| Fitness {
            reward,
            fault_prob,
            certainty,
        };
        assert!(t.satisfied(&fit(150.0, 0.03, 0.5)).fault_prob);
        assert!(!t.satisfied(&fit(80.0, 0.5, 0.5)).any());
        assert!(t.satisfied(&fit(70.0, 0.5, 0.5)).reward);
        assert!(t.satisfied(&fit(150.0, 0.5, 0.04)).certainty);
    }

    #[test]
    fn survivors_keep_size_and_rank_order() {
        let mk = |i: usize, f: [f64; 3]| Individual {
            episode: episode(&format!("e{i}"), &[i as f64]),
            fitness: Fitness {
                reward: f[0],
                fault_prob: f[1],
                certainty: f[2],
            },
            features: FeatureVector(vec![]),
            keys: vec![AbstractKey(vec![0])],
        };
        let pool = vec![
            mk(0, [9.0, 9.0, 9.0]),
            mk(1, [1.0, 5.0, 5.0]),
            mk(2, [5.0, 1.0, 5.0]),
            mk(3, [5.0, 5.0, 1.0]),
            mk(4, [4.0, 4.0, 4.0]),
        ];
        let kept = select_survivors(pool, 4);
        let ids: Vec<_> = kept.iter().map(|i| i.episode.id.as_str()).collect();
        assert_eq!(ids, vec!["e1", "e2", "e3", "e4"]);
    }

    #[test]
    fn fingerprint_ignores_ids() {
        let a = episode("a", &[1.0, 2.0]);
        let b = episode("b", &[1.0, 2.0]);
        let c = episode("c", &[1.0, 2.5]);
        assert_eq!(fingerprint(&a), fingerprint(&b));
        assert_ne!(fingerprint(&a), fingerprint(&c));
    }
}
