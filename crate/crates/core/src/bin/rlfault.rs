use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rlfault::config::CampaignConfig;
use rlfault::pipeline::{PipelineError, Workspace};

#[derive(Parser)]
#[command(name = "rlfault", version, about = "Search-based fault finding for DQN agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the agent; writes the agent file and the training log.
    TrainAgent(Common),
    /// Record random executions for the classifier dataset.
    Collect(Common),
    /// Build the abstract-state index.
    BuildIndex(Common),
    /// Fit the fault forest and report held-out metrics.
    TrainClassifier(Common),
    /// Run the seeded search campaigns.
    Search(Common),
    /// Replay archive fault candidates against the agent.
    Validate(Common),
    /// Record the random-testing baseline pool.
    Baseline(Common),
    /// Compare search against random testing at equal budget.
    Rq1(Common),
    /// Sweep the abstraction level.
    Rq2(Common),
    /// Learn and check fault rules.
    Rq3(Common),
}

#[derive(Args)]
struct Common {
    /// Campaign config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out`, then `./out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Accept upstream artifacts from a different config or seed.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::TrainAgent(c) => ("train-agent", c),
        Command::Collect(c) => ("collect", c),
        Command::BuildIndex(c) => ("build-index", c),
        Command::TrainClassifier(c) => ("train-classifier", c),
        Command::Search(c) => ("search", c),
        Command::Validate(c) => ("validate", c),
        Command::Baseline(c) => ("baseline", c),
        Command::Rq1(c) => ("rq1", c),
        Command::Rq2(c) => ("rq2", c),
        Command::Rq3(c) => ("rq3", c),
    };

    let mut config = match CampaignConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = common.seed {
        config = config.with_seed(seed);
    }
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            eprintln!("config error: --jobs must be positive");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().ok();
    }
    let dir = common
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    match run(name, Workspace::new(config, dir, common.force)) {
        Ok(summary) => {
            println!("{name}: {summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{name} failed: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(name: &str, ws: Result<Workspace, PipelineError>) -> Result<String, PipelineError> {
    let ws = ws?;
    Ok(match name {
        "train-agent" => format!("greedy mean reward {:.2} over 100 episodes", ws.train_agent()?),
        "collect" => format!("{} episodes", ws.collect()?),
        "build-index" => format!("{} abstract states", ws.build_index()?),
        "train-classifier" => {
            let m = ws.train_classifier()?;
            format!(
                "held-out accuracy {:.3}, precision {:.3}, recall {:.3}, f1 {:.3}",
                m.accuracy, m.precision, m.recall, m.f1
            )
        }
        "search" => {
            let runs = ws.search()?;
            let sizes: Vec<String> = runs.iter().map(|r| r.archive.len().to_string()).collect();
            format!("{} runs, archive sizes [{}]", runs.len(), sizes.join(", "))
        }
        "validate" => {
            let v = ws.validate()?;
            let valid: usize = v.iter().map(|r| r.report.valid).sum();
            let total: usize = v.iter().map(|r| r.report.episodes).sum();
            let faults: usize = v.iter().map(|r| r.report.confirmed_faults).sum();
            format!("{valid}/{total} candidates valid, {faults} confirmed faults")
        }
        "baseline" => format!("{} episodes", ws.baseline()?),
        "rq1" => {
            let r = ws.rq1()?;
            [&r.provided_initial, &r.self_generated]
                .iter()
                .map(|c| {
                    format!(
                        "{}: B={} search mean {:.2} vs random {:.2}, p={:.3e}",
                        c.scenario.tag(),
                        c.budget,
                        c.search_mean,
                        c.baseline_mean,
                        c.test.p_greater
                    )
                })
                .collect::<Vec<_>>()
                .join("; ")
        }
        "rq2" => ws
            .rq2()?
            .iter()
            .map(|r| format!("d={} states={} acc={:.3}", r.d, r.abstract_states, r.metrics.accuracy))
            .collect::<Vec<_>>()
            .join("; "),
        "rq3" => {
            let r = ws.rq3()?;
            format!(
                "{} rows, median f1 {:.3}, rules reproduce trees: {}",
                r.rows, r.kfold.median.f1, r.rules_match_trees
            )
        }
        _ => unreachable!("every subcommand is matched above"),
    })
}
