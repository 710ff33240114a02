//! Full campaign on a bundled preset: train, collect, index, classify,
//! search, replay, then the three experiments.
//!
//! `cargo run --release --example campaign -- cart_pole out/cp`
//!
//! Cart-Pole takes a few minutes on one core; Mountain Car training is
//! slower.

use rlfault::config::CampaignConfig;
use rlfault::env::EnvKind;
use rlfault::pipeline::Workspace;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let kind = match args.next().as_deref() {
        None | Some("cart_pole") => EnvKind::CartPole,
        Some("mountain_car") => EnvKind::MountainCar,
        Some(other) => return Err(format!("unknown preset {other}; use cart_pole or mountain_car").into()),
    };
    let out = args.next().unwrap_or_else(|| format!("out/{}", kind.tag()));
    let ws = Workspace::new(CampaignConfig::preset(kind), &out, false)?;

    println!("agent: greedy mean {:.1}", ws.train_agent()?);
    println!("collected {} episodes", ws.collect()?);
    println!("{} abstract states", ws.build_index()?);
    let m = ws.train_classifier()?;
    println!("classifier held-out accuracy {:.3}, f1 {:.3}", m.accuracy, m.f1);
    ws.baseline()?;

    let runs = ws.search()?;
    let generations: Vec<usize> = runs.iter().map(|r| r.metrics.generations).collect();
    println!("{} search runs, generations {generations:?}", runs.len());
    for v in ws.validate()? {
        println!(
            "run {}: {} candidates, {} valid, {} confirmed faults, {} mutations",
            v.run, v.report.episodes, v.report.valid, v.report.confirmed_faults, v.tally.mutations
        );
    }

    let rq1 = ws.rq1()?;
    for c in [&rq1.provided_initial, &rq1.self_generated] {
        println!(
            "rq1 {}: B = {}, search {:.1} vs random {:.1} faults, one-sided p = {:.2e}",
            c.scenario.tag(),
            c.budget,
            c.search_mean,
            c.baseline_mean,
            c.test.p_greater
        );
    }
    for row in ws.rq2()? {
        println!(
            "rq2 d = {:<6} {:>6} abstract states, accuracy {:.3}",
            row.d, row.abstract_states, row.metrics.accuracy
        );
    }
    let rq3 = ws.rq3()?;
    println!(
        "rq3: {} rows, median f1 {:.3}, rules reproduce trees: {}",
        rq3.rows, rq3.kfold.median.f1, rq3.rules_match_trees
    );
    for r in rq3.rules.iter().take(5) {
        println!("  {r}");
    }
    println!("artifacts in {out}");
    Ok(())
}
