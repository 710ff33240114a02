//! Replays recorded and spliced episodes against the agent. Executions the
//! agent would not have produced show up as deviations.

mod common;

use rlfault::episode::run_random_episodes;
use rlfault::replay::{replay_episode, validate};
use rlfault::rng::seeded;
use rlfault::search::splice;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = common::drifting_policy();
    let env = common::wide_cart_pole();
    let recorded = run_random_episodes(&env, &net, 50, &mut seeded(1), "rec")?;

    let (_, report) = validate(&recorded, &net, &env)?;
    println!(
        "recorded executions: {} valid, {} invalid, {} deviations, {} confirmed faults",
        report.valid, report.invalid, report.deviations, report.confirmed_faults
    );

    // glue the middle of one episode onto the start of another
    let (a, b) = (&recorded[0], &recorded[1]);
    let (f, v) = (a.len() / 2, b.len() / 3);
    let (child, _) = splice(a, f, b, v, ("child-a".into(), "child-b".into()));
    let out = replay_episode(&child, &net, &env)?;
    println!(
        "spliced {}[..{f}] + {}[{v}..]: valid {} deviations {} distances {:?}",
        a.id, b.id, out.valid, out.deviations, out.deviation_distances
    );
    println!(
        "replayed {} steps, ended {:?}, confirmed fault {}",
        out.executed.len(),
        out.executed.termination_cause,
        out.confirmed_fault()
    );
    Ok(())
}
