//! Steps both environments by hand and shows how episodes end.

use rlfault::env::{EnvConfig, Environment, State};
use rlfault::rng::seeded;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cart = Environment::new(EnvConfig::cart_pole())?;
    let s0 = cart.reset(&mut seeded(7));
    println!("cart-pole reset: {:?}", s0.0);

    // push right forever: the pole falls back before the cart leaves the track
    let mut steps = 0;
    loop {
        let out = cart.step(1)?;
        steps += 1;
        if out.terminated {
            println!("cart-pole ended after {steps} steps: {:?}", out.termination_cause);
            break;
        }
    }

    // start near the right edge moving outward: a boundary fault
    cart.set_state(&State(vec![2.3, 2.0, 0.0, 0.0]))?;
    cart.set_elapsed(0);
    let out = loop {
        let out = cart.step(1)?;
        if out.terminated {
            break out;
        }
    };
    println!(
        "cart stopped at x = {:.3} after {} steps: {:?}, functional fault = {}",
        out.next_state.0[0],
        cart.elapsed(),
        out.termination_cause,
        rlfault::env::is_functional_fault(&out)
    );

    let mut car = Environment::new(EnvConfig::mountain_car())?;
    car.reset(&mut seeded(7));
    let mut total = 0.0;
    let cause = loop {
        // swing with the velocity
        let a = if car.state().0[1] >= 0.0 { 2 } else { 0 };
        let out = car.step(a)?;
        total += out.reward;
        if out.terminated {
            break out.termination_cause;
        }
    };
    println!("mountain car, swinging with the velocity: {cause:?} after {} steps, return {total}", car.elapsed());
    Ok(())
}
