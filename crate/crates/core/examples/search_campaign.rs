//! One search run: evolve random executions toward low reward, high fault
//! probability and low certainty, then inspect the archive.

mod common;

use rlfault::abstraction::{build_index, AbstractionLevel};
use rlfault::classifier::{train_forest, ForestConfig};
use rlfault::episode::{run_random_episodes, Origin};
use rlfault::experiments::labeled_rows;
use rlfault::rng::seeded;
use rlfault::search::{run_search, FitnessThresholds, SearchConfig, SearchContext};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = common::drifting_policy();
    let env = common::wide_cart_pole();
    let data = run_random_episodes(&env, &net, 300, &mut seeded(1), "data")?;
    let index = build_index(data.iter().flat_map(|e| e.states()), &net, AbstractionLevel::new(0.05)?)?;
    let forest = train_forest(&labeled_rows(&data, &index, &net)?, &ForestConfig { trees: 30, ..ForestConfig::default() })?;

    let ctx = SearchContext {
        env: &env,
        net: &net,
        forest: &forest,
        index: &index,
        temperature: 1.0,
    };
    let initial = run_random_episodes(&env, &net, 60, &mut seeded(2), "init")?;
    let config = SearchConfig {
        max_generations: 10,
        crossovers_per_generation: 4,
        seed: 3,
        ..SearchConfig::default()
    };
    let out = run_search(initial, &ctx, &config, &FitnessThresholds::cart_pole(), "run0")?;

    let m = &out.metrics;
    println!(
        "{} generations, {} crossover offspring, {} unmatched crossovers, {} mutations",
        m.generations, m.crossover_offspring, m.crossover_no_match, m.mutations_executed
    );
    println!("archive size per generation: {:?}", m.archive_sizes);
    let covered = out.archive.covered();
    println!(
        "covered: reward {} fault probability {} certainty {}",
        covered.reward, covered.fault_prob, covered.certainty
    );
    let generated = out
        .archive
        .entries()
        .iter()
        .filter(|a| a.individual.episode.origin != Origin::Random)
        .count();
    println!("{} archived episodes, {generated} produced by the search", out.archive.len());
    if let Some(best) = out
        .archive
        .entries()
        .iter()
        .min_by(|a, b| a.individual.fitness.fault_prob.total_cmp(&b.individual.fitness.fault_prob))
    {
        // the objective is one minus the predicted probability
        let f = best.individual.fitness;
        println!(
            "most fault-prone: {} ({:?}) reward {} fault probability {:.2} certainty {:.3}",
            best.individual.episode.id,
            best.individual.episode.origin,
            f.reward,
            1.0 - f.fault_prob,
            f.certainty
        );
    }
    Ok(())
}
