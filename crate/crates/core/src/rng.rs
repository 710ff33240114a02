//! Seeded random streams. Every stochastic stage takes one of these so runs
//! are reproducible bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent child stream `stream` of `seed`.
pub fn derive(seed: u64, stream: u64) -> StageRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a label into a seed so sibling stages never share a stream.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, folded with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
