//! Campaign stages. Each stage is a pure function of the campaign config and
//! its upstream artifacts; [`Workspace`] adds the file layout the command
//! line tool uses, with provenance checks between stages.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{build_index, load_index, save_index, AbstractionError, AbstractionIndex, AbstractionLevel};
use crate::agent::{evaluate, load_agent, save_agent, train_dqn, AgentError, AgentRecord, QNetwork, TrainConfig};
use crate::artifact::Provenance;
use crate::classifier::{evaluate as score, load_forest, save_forest, train_forest, ClassifierError, FaultForest, Metrics};
use crate::config::CampaignConfig;
use crate::episode::{
    read_episodes, run_random_episodes, sample_training_episodes, write_episodes, Episode, EpisodeError, Origin,
};
use crate::experiments::{
    build_rule_dataset, compare_with_baseline, labeled_rows, run_rq2_sweep, run_rq3, split_indices, BudgetScenario,
    ComparisonReport, ExperimentError, Rq3Report, RunTally, SweepRow, CSV_HEADER,
};
use crate::replay::{validate, ExecutionOutcome, ReplayError, ValidationReport};
use crate::rng::{seeded, sub_seed};
use crate::search::{fingerprint, run_search, ArchiveEntry, RunMetrics, SearchContext, SearchError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing {artifact}; run `{stage}` first")]
    Missing { artifact: PathBuf, stage: &'static str },
    #[error("{artifact} was produced by a different config or seed (use --force to accept it)")]
    Provenance { artifact: PathBuf },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("corrupt artifact {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

type Result<T> = std::result::Result<T, PipelineError>;

fn stage_seed(config: &CampaignConfig, label: &str) -> u64 {
    sub_seed(config.seed, label)
}

pub fn train_config(config: &CampaignConfig) -> TrainConfig {
    TrainConfig {
        seed: stage_seed(config, "agent"),
        ..config.agent.clone()
    }
}

pub fn train_agent(config: &CampaignConfig) -> Result<(QNetwork, Vec<Episode>)> {
    let (net, log) = train_dqn(&config.env, &train_config(config))?;
    Ok((net, log.episodes))
}

/// Mean greedy return over `episodes` evaluation resets.
pub fn agent_quality(config: &CampaignConfig, net: &QNetwork, episodes: usize) -> Result<f64> {
    Ok(evaluate(net, &config.env, episodes, &mut seeded(stage_seed(config, "eval")))?)
}

/// Random executions for the classifier dataset.
pub fn collect(config: &CampaignConfig, net: &QNetwork) -> Result<Vec<Episode>> {
    let mut rng = seeded(stage_seed(config, "collect"));
    Ok(run_random_episodes(&config.env, net, config.dataset.random_episodes, &mut rng, "collect")?)
}

/// Collected random executions followed by late-biased training episodes.
/// Asks for at most as many training episodes as the log holds.
pub fn ml_dataset(config: &CampaignConfig, log: &[Episode], collected: &[Episode]) -> Result<Vec<Episode>> {
    let k = config.dataset.training_episodes.min(log.len());
    let mut rng = seeded(stage_seed(config, "dataset"));
    let mut out = collected.to_vec();
    out.extend(sample_training_episodes(log, k, &mut rng)?);
    Ok(out)
}

pub fn build_abstraction(config: &CampaignConfig, net: &QNetwork, dataset: &[Episode]) -> Result<AbstractionIndex> {
    let level = AbstractionLevel::new(config.abstraction.d)?;
    Ok(build_index(dataset.iter().flat_map(|e| e.states()), net, level)?)
}

/// Forest fitted on the training share of the dataset, with held-out metrics.
pub fn train_classifier(
    config: &CampaignConfig,
    net: &QNetwork,
    index: &AbstractionIndex,
    dataset: &[Episode],
) -> Result<(FaultForest, Metrics)> {
    let rows = labeled_rows(dataset, index, net)?;
    let mut rng = seeded(stage_seed(config, "split"));
    let (train, test) = split_indices(rows.len(), config.dataset.train_fraction, &mut rng);
    let pick = |idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
    let forest_config = crate::classifier::ForestConfig {
        seed: stage_seed(config, "forest"),
        ..config.classifier.clone()
    };
    let forest = train_forest(&pick(&train), &forest_config)?;
    let held_out = score(&forest, &pick(&test));
    Ok((forest, held_out))
}

pub fn initial_population(config: &CampaignConfig, net: &QNetwork) -> Result<Vec<Episode>> {
    let mut rng = seeded(stage_seed(config, "population"));
    Ok(run_random_episodes(&config.env, net, config.search.initial_population, &mut rng, "pop")?)
}

pub fn baseline_pool(config: &CampaignConfig, net: &QNetwork) -> Result<Vec<Episode>> {
    let mut rng = seeded(stage_seed(config, "baseline"));
    Ok(run_random_episodes(&config.env, net, config.experiment.baseline_pool, &mut rng, "baseline")?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRun {
    pub run: usize,
    pub seed: u64,
    pub initial_size: usize,
    pub initial_faults: usize,
    pub metrics: RunMetrics,
    pub archive: Vec<ArchiveEntry>,
}

pub fn search_runs(
    config: &CampaignConfig,
    net: &QNetwork,
    index: &AbstractionIndex,
    forest: &FaultForest,
    initial: &[Episode],
) -> Result<Vec<SearchRun>> {
    let ctx = SearchContext {
        env: &config.env,
        net,
        forest,
        index,
        temperature: config.search.temperature,
    };
    (0..config.search.runs)
        .map(|run| {
            let seed = stage_seed(config, &format!("search-{run}"));
            let ga = crate::search::SearchConfig {
                seed,
                ..config.search.ga.clone()
            };
            let outcome = run_search(initial.to_vec(), &ctx, &ga, &config.thresholds, &format!("r{run}"))?;
            Ok(SearchRun {
                run,
                seed,
                initial_size: initial.len(),
                initial_faults: initial.iter().filter(|e| e.fault).count(),
                metrics: outcome.metrics,
                archive: outcome.archive.into_entries(),
            })
        })
        .collect()
}

/// Archive entries the search produced that it believes are faulty: the
/// recorded ending crosses the boundary or the forest is confident.
pub fn fault_candidates(run: &SearchRun) -> Vec<Episode> {
    run.archive
        .iter()
        .filter(|a| matches!(a.individual.episode.origin, Origin::Crossover | Origin::Mutated))
        .filter(|a| a.individual.episode.fault || a.satisfied.fault_prob)
        .map(|a| a.individual.episode.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunValidation {
    pub run: usize,
    pub tally: RunTally,
    pub report: ValidationReport,
    pub outcomes: Vec<ExecutionOutcome>,
}

pub fn validate_runs(config: &CampaignConfig, net: &QNetwork, runs: &[SearchRun]) -> Result<Vec<RunValidation>> {
    runs.iter()
        .map(|run| {
            let candidates = fault_candidates(run);
            let (outcomes, report) = validate(&candidates, net, &config.env)?;
            let tally = RunTally {
                run: run.run,
                seed: run.seed,
                executed_candidates: candidates.len(),
                mutations: run.metrics.mutations_executed,
                search_faults: report.confirmed_faults,
                initial_faults: run.initial_faults,
                initial_size: run.initial_size,
            };
            Ok(RunValidation {
                run: run.run,
                tally,
                report,
                outcomes,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Report {
    pub provided_initial: ComparisonReport,
    pub self_generated: ComparisonReport,
}

pub fn rq1(config: &CampaignConfig, validations: &[RunValidation], pool: &[Episode]) -> Result<Rq1Report> {
    let tallies: Vec<RunTally> = validations.iter().map(|v| v.tally.clone()).collect();
    let compare = |scenario: BudgetScenario| {
        let mut rng = seeded(stage_seed(config, &format!("rq1-{}", scenario.tag())));
        compare_with_baseline(&tallies, scenario, pool, config.experiment.resamples, &mut rng)
    };
    Ok(Rq1Report {
        provided_initial: compare(BudgetScenario::ProvidedInitial)?,
        self_generated: compare(BudgetScenario::SelfGenerated)?,
    })
}

pub fn rq2(config: &CampaignConfig, net: &QNetwork, dataset: &[Episode]) -> Result<Vec<SweepRow>> {
    let forest = crate::classifier::ForestConfig {
        seed: stage_seed(config, "rq2-forest"),
        ..config.classifier.clone()
    };
    Ok(run_rq2_sweep(
        &config.experiment.sweep_levels,
        dataset,
        net,
        &forest,
        config.dataset.train_fraction,
        stage_seed(config, "rq2-split"),
    )?)
}

/// Distinct confirmed faults across runs, as executed.
pub fn confirmed_faults(validations: &[RunValidation]) -> Vec<Episode> {
    let mut seen = HashSet::new();
    validations
        .iter()
        .flat_map(|v| &v.outcomes)
        .filter(|o| o.confirmed_fault())
        .filter(|o| seen.insert(fingerprint(&o.executed)))
        .map(|o| o.executed.clone())
        .collect()
}

pub fn rq3(
    config: &CampaignConfig,
    net: &QNetwork,
    index: &AbstractionIndex,
    validations: &[RunValidation],
    pool: &[Episode],
) -> Result<Rq3Report> {
    let faults = confirmed_faults(validations);
    let mut rng = seeded(stage_seed(config, "rq3-rows"));
    let rows = build_rule_dataset(&faults, pool, index, net, &mut rng)?;
    Ok(run_rq3(
        &rows,
        config.experiment.rule_folds,
        &config.experiment.rule_tree,
        stage_seed(config, "rq3-folds"),
    )?)
}

/// Artifact file names inside the output directory.
pub mod files {
    pub const AGENT: &str = "agent.json";
    pub const TRAINING_LOG: &str = "training_log.jsonl";
    pub const COLLECTED: &str = "random_episodes.jsonl";
    pub const INDEX: &str = "index.json";
    pub const FOREST: &str = "forest.json";
    pub const CLASSIFIER_METRICS: &str = "classifier_metrics.json";
    pub const POPULATION: &str = "initial_population.jsonl";
    pub const SEARCH: &str = "search.json";
    pub const ARCHIVE: &str = "archive.jsonl";
    pub const VALIDATION: &str = "validation.json";
    pub const VALIDATED: &str = "validated_archive.jsonl";
    pub const BASELINE: &str = "baseline.jsonl";
    pub const RQ1_CSV: &str = "rq1.csv";
    pub const RQ1_SUMMARY: &str = "rq1_summary.json";
    pub const RQ2_CSV: &str = "rq2.csv";
    pub const RQ2_SUMMARY: &str = "rq2_summary.json";
    pub const RQ3_SUMMARY: &str = "rq3_summary.json";
    pub const RQ3_RULES: &str = "rq3_rules.txt";
}

#[derive(Serialize, Deserialize)]
struct Stamped<T> {
    provenance: Provenance,
    #[serde(flatten)]
    body: T,
}

/// Summary records echo the config next to their results.
#[derive(Serialize, Deserialize)]
struct WithConfig<T> {
    config: CampaignConfig,
    #[serde(flatten)]
    result: T,
}

/// The output directory of one campaign.
pub struct Workspace {
    pub config: CampaignConfig,
    pub dir: PathBuf,
    /// Accept upstream artifacts whose provenance does not match.
    pub force: bool,
}

impl Workspace {
    pub fn new(config: CampaignConfig, dir: impl Into<PathBuf>, force: bool) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| PipelineError::Write {
            path: dir.clone(),
            source,
        })?;
        Ok(Workspace { config, dir, force })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn provenance(&self) -> Provenance {
        self.config.provenance()
    }

    fn require(&self, name: &str, stage: &'static str) -> Result<PathBuf> {
        let path = self.path(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(PipelineError::Missing { artifact: path, stage })
        }
    }

    fn check(&self, path: &Path, found: &Provenance) -> Result<()> {
        if self.force || *found == self.provenance() {
            Ok(())
        } else {
            Err(PipelineError::Provenance {
                artifact: path.to_path_buf(),
            })
        }
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|source| PipelineError::Write { path, source })
    }

    fn write_json<T: Serialize>(&self, name: &str, body: T) -> Result<()> {
        let stamped = Stamped {
            provenance: self.provenance(),
            body,
        };
        let text = serde_json::to_string_pretty(&stamped).map_err(|e| PipelineError::Corrupt {
            path: self.path(name),
            message: e.to_string(),
        })?;
        self.write_text(name, &(text + "\n"))
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str, stage: &'static str) -> Result<T> {
        let path = self.require(name, stage)?;
        let text = fs::read_to_string(&path).map_err(|e| PipelineError::Corrupt {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let stamped: Stamped<T> = serde_json::from_str(&text).map_err(|e| PipelineError::Corrupt {
            path: path.clone(),
            message: e.to_string(),
        })?;
        self.check(&path, &stamped.provenance)?;
        Ok(stamped.body)
    }

    fn write_episodes(&self, name: &str, episodes: &[Episode]) -> Result<()> {
        Ok(write_episodes(&self.path(name), episodes, &self.provenance())?)
    }

    fn read_episodes(&self, name: &str, stage: &'static str) -> Result<Vec<Episode>> {
        let path = self.require(name, stage)?;
        let (episodes, provenance) = read_episodes(&path)?;
        self.check(&path, &provenance)?;
        Ok(episodes)
    }

    pub fn load_agent(&self) -> Result<QNetwork> {
        let path = self.require(files::AGENT, "train-agent")?;
        let record = load_agent(&path)?;
        self.check(&path, &record.provenance)?;
        Ok(record.network)
    }

    fn load_index(&self) -> Result<AbstractionIndex> {
        let path = self.require(files::INDEX, "build-index")?;
        let (index, provenance) = load_index(&path)?;
        self.check(&path, &provenance)?;
        Ok(index)
    }

    fn load_forest(&self) -> Result<FaultForest> {
        let path = self.require(files::FOREST, "train-classifier")?;
        let (forest, provenance) = load_forest(&path)?;
        self.check(&path, &provenance)?;
        Ok(forest)
    }

    fn dataset(&self) -> Result<Vec<Episode>> {
        let log = self.read_episodes(files::TRAINING_LOG, "train-agent")?;
        let collected = self.read_episodes(files::COLLECTED, "collect")?;
        ml_dataset(&self.config, &log, &collected)
    }

    /// Returns the greedy evaluation mean over 100 episodes.
    pub fn train_agent(&self) -> Result<f64> {
        let (net, log) = train_agent(&self.config)?;
        let quality = agent_quality(&self.config, &net, 100)?;
        let record = AgentRecord::new(net, &self.config.env, &train_config(&self.config), self.provenance());
        save_agent(&self.path(files::AGENT), &record)?;
        self.write_episodes(files::TRAINING_LOG, &log)?;
        Ok(quality)
    }

    pub fn collect(&self) -> Result<usize> {
        let net = self.load_agent()?;
        let episodes = collect(&self.config, &net)?;
        self.write_episodes(files::COLLECTED, &episodes)?;
        Ok(episodes.len())
    }

    /// Returns the number of abstract states.
    pub fn build_index(&self) -> Result<usize> {
        let net = self.load_agent()?;
        let index = build_abstraction(&self.config, &net, &self.dataset()?)?;
        save_index(&self.path(files::INDEX), &index, &self.provenance())?;
        Ok(index.len())
    }

    pub fn train_classifier(&self) -> Result<Metrics> {
        let net = self.load_agent()?;
        let index = self.load_index()?;
        let (forest, held_out) = train_classifier(&self.config, &net, &index, &self.dataset()?)?;
        save_forest(&self.path(files::FOREST), &forest, &self.provenance())?;
        self.write_json(files::CLASSIFIER_METRICS, &held_out)?;
        Ok(held_out)
    }

    pub fn search(&self) -> Result<Vec<SearchRun>> {
        let net = self.load_agent()?;
        let forest = self.load_forest()?;
        let index = self.load_index()?;
        let initial = initial_population(&self.config, &net)?;
        let runs = search_runs(&self.config, &net, &index, &forest, &initial)?;
        self.write_episodes(files::POPULATION, &initial)?;
        let archive: Vec<Episode> = runs
            .iter()
            .flat_map(|r| r.archive.iter().map(|a| a.individual.episode.clone()))
            .collect();
        self.write_episodes(files::ARCHIVE, &archive)?;
        self.write_json(files::SEARCH, SearchFile { runs: runs.clone() })?;
        Ok(runs)
    }

    fn runs(&self) -> Result<Vec<SearchRun>> {
        Ok(self.read_json::<SearchFile>(files::SEARCH, "search")?.runs)
    }

    pub fn validate(&self) -> Result<Vec<RunValidation>> {
        let net = self.load_agent()?;
        let validations = validate_runs(&self.config, &net, &self.runs()?)?;
        let executed: Vec<Episode> = validations
            .iter()
            .flat_map(|v| v.outcomes.iter().map(|o| o.executed.clone()))
            .collect();
        self.write_episodes(files::VALIDATED, &executed)?;
        self.write_json(
            files::VALIDATION,
            ValidationFile {
                runs: validations.clone(),
            },
        )?;
        Ok(validations)
    }

    fn validations(&self) -> Result<Vec<RunValidation>> {
        Ok(self.read_json::<ValidationFile>(files::VALIDATION, "validate")?.runs)
    }

    pub fn baseline(&self) -> Result<usize> {
        let net = self.load_agent()?;
        let pool = baseline_pool(&self.config, &net)?;
        self.write_episodes(files::BASELINE, &pool)?;
        Ok(pool.len())
    }

    pub fn rq1(&self) -> Result<Rq1Report> {
        let pool = self.read_episodes(files::BASELINE, "baseline")?;
        let report = rq1(&self.config, &self.validations()?, &pool)?;
        let mut csv = vec![CSV_HEADER.to_string()];
        csv.extend(report.provided_initial.csv_rows());
        csv.extend(report.self_generated.csv_rows());
        self.write_text(files::RQ1_CSV, &(csv.join("\n") + "\n"))?;
        self.write_json(
            files::RQ1_SUMMARY,
            WithConfig {
                config: self.config.clone(),
                result: &report,
            },
        )?;
        Ok(report)
    }

    pub fn rq2(&self) -> Result<Vec<SweepRow>> {
        let net = self.load_agent()?;
        let rows = rq2(&self.config, &net, &self.dataset()?)?;
        let mut csv = vec!["d,abstract_states,accuracy,precision,recall,f1".to_string()];
        csv.extend(rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.d, r.abstract_states, r.metrics.accuracy, r.metrics.precision, r.metrics.recall, r.metrics.f1
            )
        }));
        self.write_text(files::RQ2_CSV, &(csv.join("\n") + "\n"))?;
        self.write_json(
            files::RQ2_SUMMARY,
            WithConfig {
                config: self.config.clone(),
                result: SweepFile { levels: rows.clone() },
            },
        )?;
        Ok(rows)
    }

    pub fn rq3(&self) -> Result<Rq3Report> {
        let net = self.load_agent()?;
        let index = self.load_index()?;
        let pool = self.read_episodes(files::BASELINE, "baseline")?;
        let report = rq3(&self.config, &net, &index, &self.validations()?, &pool)?;
        let rules: Vec<String> = report.rules.iter().map(|r| r.to_string()).collect();
        self.write_text(files::RQ3_RULES, &(rules.join("\n") + "\n"))?;
        self.write_json(
            files::RQ3_SUMMARY,
            WithConfig {
                config: self.config.clone(),
                result: &report,
            },
        )?;
        Ok(report)
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct SearchFile {
    runs: Vec<SearchRun>,
}

#[derive(Clone, Serialize, Deserialize)]
struct ValidationFile {
    runs: Vec<RunValidation>,
}

#[derive(Serialize, Deserialize)]
struct SweepFile {
    levels: Vec<SweepRow>,
}
