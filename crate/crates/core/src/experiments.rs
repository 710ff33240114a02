//! Experiment protocols: the rank-sum test, budget accounting, the random
//! testing baseline, the abstraction-level sweep and the rule study.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::abstraction::{build_index, AbstractionError, AbstractionLevel};
use crate::agent::QNetwork;
use crate::classifier::{
    evaluate, extract_rules, kfold_metrics, train_forest, train_tree, Classifier, ClassifierError, DecisionTree,
    ForestConfig, KFoldReport, LabeledRow, Metrics, Rule, RuleSet, TreeParams,
};
use crate::episode::{encode_features, Episode, EpisodeError, FeatureVector};
use crate::rng::{seeded, StageRng};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("sample {0} is empty")]
    EmptySample(&'static str),
    #[error("baseline pool holds {available} episodes, budget needs {needed}")]
    InsufficientPool { needed: usize, available: usize },
    #[error("no validated faults to build a rule dataset from")]
    NoFaults,
    #[error("need {needed} non-faulty episodes, pool has {available}")]
    NotEnoughNegatives { needed: usize, available: usize },
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `U` of the first sample: pairs with `x > y`, ties counting one half.
    pub u: f64,
    /// One-sided p for the first sample being stochastically larger.
    pub p_greater: f64,
    /// One-sided p for the first sample being stochastically smaller.
    pub p_less: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

/// Samples with `|x| * |y|` up to this size get the exact null distribution.
pub const EXACT_LIMIT: usize = 400;

/// Midranks (1-based) of the pooled sample, plus tie-group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    /// Exact when `|x| * |y| <= EXACT_LIMIT`, normal approximation otherwise.
    Auto,
    Exact,
    Normal,
}

pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<MannWhitney, ExperimentError> {
    mann_whitney_u_with(x, y, PValueMethod::Auto)
}

pub fn mann_whitney_u_with(x: &[f64], y: &[f64], method: PValueMethod) -> Result<MannWhitney, ExperimentError> {
    if x.is_empty() {
        return Err(ExperimentError::EmptySample("x"));
    }
    if y.is_empty() {
        return Err(ExperimentError::EmptySample("y"));
    }
    let (n1, n2) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;

    let exact = match method {
        PValueMethod::Auto => n1 * n2 <= EXACT_LIMIT,
        PValueMethod::Exact => true,
        PValueMethod::Normal => false,
    };
    let (p_greater, p_less) = if exact {
        exact_tails(&ranks, n1, r1)
    } else {
        let mu = (n1 * n2) as f64 / 2.0;
        let n = (n1 + n2) as f64;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
        let var = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term);
        if var <= 0.0 {
            (1.0, 1.0)
        } else {
            let sd = var.sqrt();
            let normal = Normal::standard();
            let greater = normal.sf((u - mu - 0.5) / sd);
            let less = normal.cdf((u - mu + 0.5) / sd);
            (greater.min(1.0), less.min(1.0))
        }
    };
    Ok(MannWhitney {
        u,
        p_greater,
        p_less,
        p_two_sided: (2.0 * p_greater.min(p_less)).min(1.0),
        exact,
    })
}

/// Exact upper and lower tail probabilities of the first sample's rank sum
/// under random assignment of the pooled midranks. Counts every subset of
/// size `n1` by dynamic programming over doubled (hence integral) ranks.
fn exact_tails(ranks: &[f64], n1: usize, r1: f64) -> (f64, f64) {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0f64; max_sum + 1]; n1 + 1];
    ways[0][0] = 1.0;
    for &w in &doubled {
        for j in (1..=n1).rev() {
            let (lower, upper) = ways.split_at_mut(j);
            let prev = &lower[j - 1];
            let cur = &mut upper[0];
            for s in (w..=max_sum).rev() {
                cur[s] += prev[s - w];
            }
        }
    }
    let observed = (2.0 * r1).round() as usize;
    let total: f64 = ways[n1].iter().sum();
    let ge: f64 = ways[n1][observed..].iter().sum();
    let le: f64 = ways[n1][..=observed].iter().sum();
    (ge / total, le / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetScenario {
    /// The initial population comes for free.
    ProvidedInitial,
    /// Executing the initial population is charged to the search.
    SelfGenerated,
}

impl BudgetScenario {
    pub fn tag(self) -> &'static str {
        match self {
            BudgetScenario::ProvidedInitial => "provided_initial",
            BudgetScenario::SelfGenerated => "self_generated",
        }
    }

    pub fn budget(self, initial: usize, n: usize, m: usize) -> usize {
        match self {
            BudgetScenario::ProvidedInitial => n + m,
            BudgetScenario::SelfGenerated => initial + n + m,
        }
    }
}

/// Per-run tallies from a search campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTally {
    pub run: usize,
    pub seed: u64,
    /// Search-generated fault candidates executed after the search (N).
    pub executed_candidates: usize,
    /// Mutated episodes executed during the search (M).
    pub mutations: usize,
    /// Confirmed faults among search-generated episodes.
    pub search_faults: usize,
    /// Faulty episodes in the initial population.
    pub initial_faults: usize,
    pub initial_size: usize,
}

impl RunTally {
    pub fn faults(&self, scenario: BudgetScenario) -> usize {
        match scenario {
            BudgetScenario::ProvidedInitial => self.search_faults,
            BudgetScenario::SelfGenerated => self.search_faults + self.initial_faults,
        }
    }

    pub fn budget(&self, scenario: BudgetScenario) -> usize {
        scenario.budget(self.initial_size, self.executed_candidates, self.mutations)
    }
}

/// Fault counts of `resamples` with-replacement draws of size `b` from the pool.
pub fn resample_fault_counts(pool: &[Episode], b: usize, resamples: usize, rng: &mut StageRng) -> Vec<usize> {
    (0..resamples)
        .map(|_| (0..b).filter(|_| pool[rng.gen_range(0..pool.len())].fault).count())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario: BudgetScenario,
    pub runs: usize,
    pub mean_n: f64,
    pub mean_m: f64,
    pub initial_size: usize,
    pub budget: usize,
    pub search_faults: Vec<usize>,
    pub baseline_faults: Vec<usize>,
    pub search_mean: f64,
    pub baseline_mean: f64,
    pub test: MannWhitney,
}

impl ComparisonReport {
    /// One line per run and per resample: `run_id,method,scenario,B,faults`.
    pub fn csv_rows(&self) -> Vec<String> {
        let tag = self.scenario.tag();
        let search = self
            .search_faults
            .iter()
            .enumerate()
            .map(|(i, f)| format!("{i},search,{tag},{},{f}", self.budget));
        let baseline = self
            .baseline_faults
            .iter()
            .enumerate()
            .map(|(i, f)| format!("{i},random,{tag},{},{f}", self.budget));
        search.chain(baseline).collect()
    }
}

pub const CSV_HEADER: &str = "run_id,method,scenario,B,faults";

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Compares search runs against resampled random testing at equal budget.
/// `B` uses the mean N and M over runs, rounded to the nearest episode.
pub fn compare_with_baseline(
    tallies: &[RunTally],
    scenario: BudgetScenario,
    pool: &[Episode],
    resamples: usize,
    rng: &mut StageRng,
) -> Result<ComparisonReport, ExperimentError> {
    let first = tallies.first().ok_or(ExperimentError::EmptySample("runs"))?;
    if resamples == 0 {
        return Err(ExperimentError::Config("resamples must be positive".into()));
    }
    let mean_n = mean(tallies.iter().map(|t| t.executed_candidates as f64));
    let mean_m = mean(tallies.iter().map(|t| t.mutations as f64));
    let initial_size = first.initial_size;
    let budget = scenario.budget(initial_size, 0, 0) + (mean_n + mean_m).round() as usize;
    if pool.len() < budget || pool.is_empty() {
        return Err(ExperimentError::InsufficientPool {
            needed: budget.max(1),
            available: pool.len(),
        });
    }
    let search_faults: Vec<usize> = tallies.iter().map(|t| t.faults(scenario)).collect();
    let baseline_faults = resample_fault_counts(pool, budget, resamples, rng);
    let as_f = |v: &[usize]| v.iter().map(|&c| c as f64).collect::<Vec<_>>();
    let test = mann_whitney_u(&as_f(&search_faults), &as_f(&baseline_faults))?;
    Ok(ComparisonReport {
        scenario,
        runs: tallies.len(),
        mean_n,
        mean_m,
        initial_size,
        budget,
        search_mean: mean(search_faults.iter().map(|&c| c as f64)),
        baseline_mean: mean(baseline_faults.iter().map(|&c| c as f64)),
        search_faults,
        baseline_faults,
        test,
    })
}

pub fn labeled_rows(
    episodes: &[Episode],
    index: &crate::abstraction::AbstractionIndex,
    net: &QNetwork,
) -> Result<Vec<LabeledRow>, ExperimentError> {
    episodes
        .iter()
        .map(|e| Ok(LabeledRow::new(encode_features(e, index, net)?, e.fault)))
        .collect()
}

/// Shuffled split; the first `train_fraction` of the permutation trains.
pub fn split_indices(n: usize, train_fraction: f64, rng: &mut StageRng) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let cut = ((n as f64) * train_fraction).round() as usize;
    let test = order.split_off(cut.min(n));
    (order, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: f64,
    pub abstract_states: usize,
    pub metrics: Metrics,
}

/// Rebuilds the index at each level, re-encodes the dataset and scores a
/// forest trained on a 70/30 split. The split is the same for every level.
pub fn run_rq2_sweep(
    levels: &[f64],
    dataset: &[Episode],
    net: &QNetwork,
    forest: &ForestConfig,
    train_fraction: f64,
    split_seed: u64,
) -> Result<Vec<SweepRow>, ExperimentError> {
    if dataset.is_empty() {
        return Err(ExperimentError::EmptySample("dataset"));
    }
    let (train_idx, test_idx) = split_indices(dataset.len(), train_fraction, &mut seeded(split_seed));
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(ExperimentError::Config("split leaves an empty side".into()));
    }
    levels
        .iter()
        .map(|&d| {
            let level = AbstractionLevel::new(d)?;
            let index = build_index(dataset.iter().flat_map(|e| e.states()), net, level)?;
            let rows = labeled_rows(dataset, &index, net)?;
            let pick = |idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
            let model = train_forest(&pick(&train_idx), forest)?;
            Ok(SweepRow {
                d,
                abstract_states: index.len(),
                metrics: evaluate(&model, &pick(&test_idx)),
            })
        })
        .collect()
}

/// All validated faults plus as many non-faulty pool episodes, drawn without
/// replacement.
pub fn build_rule_dataset(
    faults: &[Episode],
    pool: &[Episode],
    index: &crate::abstraction::AbstractionIndex,
    net: &QNetwork,
    rng: &mut StageRng,
) -> Result<Vec<LabeledRow>, ExperimentError> {
    if faults.is_empty() {
        return Err(ExperimentError::NoFaults);
    }
    let negatives: Vec<&Episode> = pool.iter().filter(|e| !e.fault).collect();
    if negatives.len() < faults.len() {
        return Err(ExperimentError::NotEnoughNegatives {
            needed: faults.len(),
            available: negatives.len(),
        });
    }
    let chosen: Vec<Episode> = negatives
        .choose_multiple(rng, faults.len())
        .map(|&e| e.clone())
        .collect();
    let mut rows = Vec::with_capacity(2 * faults.len());
    for e in faults {
        rows.push(LabeledRow::new(encode_features(e, index, net)?, true));
    }
    for e in &chosen {
        rows.push(LabeledRow::new(encode_features(e, index, net)?, false));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq3Report {
    pub rows: usize,
    pub kfold: KFoldReport,
    /// Every fold's rule set reproduced its tree on all rows.
    pub rules_match_trees: bool,
    pub rules: Vec<Rule>,
}

/// K-fold decision trees on the rule dataset. Rules come from a tree fitted
/// to all rows; each fold's extracted rules are checked against the fold tree.
pub fn run_rq3(rows: &[LabeledRow], k: usize, params: &TreeParams, seed: u64) -> Result<Rq3Report, ExperimentError> {
    let mut rng = seeded(seed);
    let mut consistent = true;
    let kfold = kfold_metrics(
        rows,
        k,
        |train, rng| {
            let tree = train_tree(train, params, rng)?;
            consistent &= rules_reproduce(&tree, rows);
            Ok(tree)
        },
        &mut rng,
    )?;
    let full = train_tree(rows, params, &mut rng)?;
    consistent &= rules_reproduce(&full, rows);
    Ok(Rq3Report {
        rows: rows.len(),
        kfold,
        rules_match_trees: consistent,
        rules: extract_rules(&full),
    })
}

/// The fault rules of `tree`, used as a classifier, agree with the tree on
/// every row.
pub fn rules_reproduce(tree: &DecisionTree, rows: &[LabeledRow]) -> bool {
    let rules = RuleSet(extract_rules(tree));
    rows.iter().all(|r| rules.predict(&r.features) == tree.predict(&r.features))
}

/// Same check on arbitrary vectors.
pub fn rules_reproduce_on(tree: &DecisionTree, vectors: &[FeatureVector]) -> bool {
    let rules = RuleSet(extract_rules(tree));
    vectors.iter().all(|x| rules.predict(x) == tree.predict(x))
}
