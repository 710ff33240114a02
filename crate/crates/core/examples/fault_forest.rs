//! Trains the fault classifier on abstract-state presence features and
//! turns a single tree into readable fault rules.

mod common;

use rlfault::abstraction::{build_index, AbstractionLevel};
use rlfault::classifier::{evaluate, extract_rules, train_forest, train_tree, ForestConfig, RuleSet, TreeParams};
use rlfault::episode::run_random_episodes;
use rlfault::experiments::{labeled_rows, split_indices};
use rlfault::rng::seeded;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = common::drifting_policy();
    let env = common::wide_cart_pole();
    let episodes = run_random_episodes(&env, &net, 600, &mut seeded(1), "ep")?;
    let faults = episodes.iter().filter(|e| e.fault).count();
    println!("{} episodes, {faults} faulty", episodes.len());

    let index = build_index(episodes.iter().flat_map(|e| e.states()), &net, AbstractionLevel::new(0.05)?)?;
    let rows = labeled_rows(&episodes, &index, &net)?;
    let (train, test) = split_indices(rows.len(), 0.7, &mut seeded(2));
    let pick = |idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();

    let forest = train_forest(&pick(&train), &ForestConfig { trees: 50, ..ForestConfig::default() })?;
    let m = evaluate(&forest, &pick(&test));
    println!(
        "forest on {} held-out episodes: accuracy {:.3} precision {:.3} recall {:.3} f1 {:.3}",
        test.len(),
        m.accuracy,
        m.precision,
        m.recall,
        m.f1
    );

    let tree = train_tree(&pick(&train), &TreeParams { max_depth: Some(4), ..TreeParams::default() }, &mut seeded(3))?;
    let rules = RuleSet(extract_rules(&tree));
    println!("{} fault rules from a depth-4 tree:", rules.0.len());
    for r in &rules.0 {
        println!("  {r}");
    }
    println!("rules as a classifier: {:?}", evaluate(&rules, &pick(&test)));
    Ok(())
}
