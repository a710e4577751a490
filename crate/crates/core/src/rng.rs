//! Seed derivation and Gaussian sampling.
//!
//! Every random draw in the crate goes through a `ChaCha8Rng` derived from
//! a master seed plus a list of purpose tags, so the same (seed, tags)
//! always yields the same stream regardless of call order elsewhere.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for combining seed material.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold purpose tags into a master seed.
pub fn mix_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut acc = mix(seed);
    for &t in tags {
        acc = mix(acc ^ t);
    }
    acc
}

/// Derive an independent RNG from a master seed and purpose tags.
pub fn derive(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, tags))
}

/// One standard-normal draw via Box-Muller.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // gen::<f64>() is in [0, 1); shift away from 0 for the log.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `n` iid standard-normal draws.
pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Deterministic Fisher-Yates shuffle of `0..n`.
pub fn shuffled_indices(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
