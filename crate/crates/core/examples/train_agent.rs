//! Trains a small Double DQN on Cart-Pole, evaluates it and round-trips the
//! agent file.
//!
//! `cargo run --release --example train_agent -- 20000`

use rlfault::agent::{evaluate, load_agent, save_agent, train_dqn, AgentRecord, TrainConfig};
use rlfault::artifact::Provenance;
use rlfault::env::EnvConfig;
use rlfault::rng::seeded;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map_or(Ok(5_000), |s| s.parse())?;
    let env = EnvConfig::cart_pole();
    let config = TrainConfig {
        total_timesteps: steps,
        seed: 3,
        ..TrainConfig::default()
    };
    let (net, log) = train_dqn(&env, &config)?;
    let last: Vec<f64> = log.episodes.iter().rev().take(10).map(|e| e.accumulated_reward).collect();
    println!("{} training episodes, last returns {last:?}", log.episodes.len());
    println!("greedy mean over 20 episodes: {:.1}", evaluate(&net, &env, 20, &mut seeded(1))?);

    let path = std::env::temp_dir().join("rlfault-example-agent.json");
    save_agent(&path, &AgentRecord::new(net.clone(), &env, &config, Provenance::default()))?;
    let back = load_agent(&path)?.network;
    let probe = rlfault::env::State(vec![0.1, -0.2, 0.03, 0.4]);
    assert_eq!(back.q_values(&probe)?, net.q_values(&probe)?);
    println!("agent file round-trips: {}", path.display());
    Ok(())
}
