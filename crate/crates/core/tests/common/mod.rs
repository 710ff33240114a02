//! Independent reference implementations shared by the test targets.

#![allow(dead_code)]

use rand::Rng;
use rlfault::agent::QNetwork;
use rlfault::env::State;
use rlfault::rng::seeded;

pub fn random_states(n: usize, seed: u64) -> Vec<State> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            State(vec![
                rng.gen_range(-2.4..2.4),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-0.21..0.21),
                rng.gen_range(-3.5..3.5),
            ])
        })
        .collect()
}

/// Scan every known abstract state and join the first whose
/// representative's Q-values land in the same size-`d` buckets.
pub fn literal_scan(states: &[State], net: &QNetwork, d: f64) -> Vec<usize> {
    let mut reps: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::new();
    for s in states {
        let q = net.q_values(s).unwrap();
        let same = |r: &Vec<f64>| r.iter().zip(&q).all(|(a, b)| (a / d).ceil() == (b / d).ceil());
        match reps.iter().position(same) {
            Some(i) => out.push(i),
            None => {
                reps.push(q);
                out.push(reps.len() - 1);
            }
        }
    }
    out
}

/// A random 4-64-64-2 network with Q-values spread wide enough that every
/// level in {0.1, 1, 5} yields several groups.
pub fn wide_network(seed: u64) -> QNetwork {
    let mut net = QNetwork::init(4, &[64, 64], 2, &mut seeded(seed));
    let mut p = net.params();
    p.iter_mut().for_each(|w| *w *= 3.0);
    net.set_params(&p);
    net
}

pub fn dominates(a: &[f64; 3], b: &[f64; 3]) -> bool {
    (0..3).all(|m| a[m] <= b[m]) && (0..3).any(|m| a[m] < b[m])
}

/// Per-objective minimisers get rank 0; the rest are peeled front by front.
pub fn brute_force_ranks(objs: &[[f64; 3]]) -> Vec<usize> {
    let n = objs.len();
    let mut rank = vec![usize::MAX; n];
    for m in 0..3 {
        let best = objs.iter().map(|o| o[m]).fold(f64::INFINITY, f64::min);
        (0..n).filter(|&i| objs[i][m] == best).for_each(|i| rank[i] = 0);
    }
    let mut r = 1;
    loop {
        let left: Vec<usize> = (0..n).filter(|&i| rank[i] == usize::MAX).collect();
        if left.is_empty() {
            break;
        }
        let front: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| dominates(&objs[j], &objs[i])))
            .collect();
        front.iter().for_each(|&i| rank[i] = r);
        r += 1;
    }
    rank
}

/// Fitness triples on a coarse grid so ties and duplicates are common.
pub fn grid_triples(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            [
                rng.gen_range(0..12) as f64,
                rng.gen_range(0..12) as f64 / 10.0,
                rng.gen_range(0..12) as f64 / 20.0,
            ]
        })
        .collect()
}

fn pair_score(a: f64, b: f64) -> f64 {
    if a > b {
        1.0
    } else if a == b {
        0.5
    } else {
        0.0
    }
}

/// Upper and lower tail probabilities of U over every way of assigning the
/// pooled values to a sample of size |x|.
pub fn enumerate_tails(x: &[f64], y: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let u_of = |mask: u32| {
        let mut u = 0.0;
        for i in (0..n).filter(|i| mask & (1 << i) != 0) {
            for j in (0..n).filter(|j| mask & (1 << j) == 0) {
                u += pair_score(pooled[i], pooled[j]);
            }
        }
        u
    };
    let observed: f64 = x.iter().flat_map(|&a| y.iter().map(move |&b| pair_score(a, b))).sum();
    let (mut total, mut ge, mut le) = (0.0, 0.0, 0.0);
    for mask in (0u32..(1 << n)).filter(|m| m.count_ones() as usize == x.len()) {
        let u = u_of(mask);
        total += 1.0;
        if u >= observed - 1e-9 {
            ge += 1.0;
        }
        if u <= observed + 1e-9 {
            le += 1.0;
        }
    }
    (ge / total, le / total)
}
