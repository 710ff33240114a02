//! Mann-Whitney U with exact and normal-approximation p-values, and the
//! equal-budget comparison against random testing.

mod common;

use rlfault::episode::run_random_episodes;
use rlfault::experiments::{mann_whitney_u, mann_whitney_u_with, resample_fault_counts, PValueMethod};
use rlfault::rng::seeded;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0])?;
    println!("{{1,2,3}} vs {{4,5,6}}: U = {} p(less) = {} exact = {}", r.u, r.p_less, r.exact);

    let x = [12.0, 15.0, 11.0, 18.0, 14.0, 16.0, 13.0, 17.0];
    let y = [10.0, 9.0, 12.0, 8.0, 11.0, 13.0, 10.0, 9.0];
    let e = mann_whitney_u_with(&x, &y, PValueMethod::Exact)?;
    let n = mann_whitney_u_with(&x, &y, PValueMethod::Normal)?;
    println!("8 vs 8 with ties: exact p(greater) {:.5}, normal {:.5}", e.p_greater, n.p_greater);

    // fault counts of random testing at a fixed budget
    let net = common::drifting_policy();
    let env = common::wide_cart_pole();
    let pool = run_random_episodes(&env, &net, 2_000, &mut seeded(1), "pool")?;
    let counts = resample_fault_counts(&pool, 100, 20, &mut seeded(2));
    println!("faults in 20 random draws of 100 episodes: {counts:?}");
    let shifted: Vec<f64> = counts.iter().map(|&c| c as f64 + 8.0).collect();
    let base: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let t = mann_whitney_u(&shifted, &base)?;
    println!("a method finding 8 more per budget: one-sided p = {:.2e}", t.p_greater);
    Ok(())
}
