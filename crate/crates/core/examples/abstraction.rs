//! Groups visited states by their bucketed Q-values at several levels.

mod common;

use rlfault::abstraction::{build_index, state_key, AbstractionLevel};
use rlfault::episode::{encode_features, run_random_episodes};
use rlfault::rng::seeded;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = common::drifting_policy();
    let env = common::wide_cart_pole();
    let episodes = run_random_episodes(&env, &net, 200, &mut seeded(1), "ep")?;
    let states: usize = episodes.iter().map(|e| e.len()).sum();
    println!("{states} concrete states from {} episodes", episodes.len());

    for d in [0.01, 0.05, 0.2, 1.0] {
        let level = AbstractionLevel::new(d)?;
        let index = build_index(episodes.iter().flat_map(|e| e.states()), &net, level)?;
        println!("d = {d:<5} -> {:>5} abstract states", index.len());
    }

    let level = AbstractionLevel::new(0.05)?;
    let index = build_index(episodes.iter().flat_map(|e| e.states()), &net, level)?;
    let s = &episodes[0].steps[0].state;
    println!("first state {:?} has key {:?}", s.0, state_key(&net, s, level)?.0);
    let x = encode_features(&episodes[0], &index, &net)?;
    let present = x.0.iter().filter(|&&b| b == 1).count();
    println!("episode 0 touches {present} of {} abstract states", x.len());
    Ok(())
}
