//! A hand-written Cart-Pole policy shared by the examples, so they run in
//! seconds without training.

#![allow(dead_code)]

use rlfault::agent::{Activation, Dense, QNetwork};
use rlfault::env::EnvConfig;

/// Linear Q-function that balances the pole but steers the cart outward.
/// About four in ten episodes from the widened start box hit the boundary.
pub fn drifting_policy() -> QNetwork {
    QNetwork::new(vec![Dense {
        inputs: 4,
        outputs: 2,
        activation: Activation::Identity,
        weights: vec![0.0, 0.0, -1.0, -0.25, -0.05, -0.1, 1.0, 0.25],
        bias: vec![0.0, 0.0],
    }])
    .expect("valid layer")
}

/// Cart-Pole with wider initial positions and velocities.
pub fn wide_cart_pole() -> EnvConfig {
    let mut env = EnvConfig::cart_pole();
    env.init_ranges = Some(vec![[-0.5, 0.5], [-0.5, 0.5], [-0.1, 0.1], [-0.3, 0.3]]);
    env
}
