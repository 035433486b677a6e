//! Deterministic seeding and the parameter-sampling primitives shared by the
//! estimators.
//!
//! Every stochastic component takes a `u64` seed and derives sub-seeds with
//! [`derive_seed`], a counter-based split: worker counts and scheduling order
//! can never change which random stream a given task sees.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// 64-bit finaliser (splitmix64 style); avalanche-mixes its input.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for sub-task `index` of a master seed.
///
/// Pure function of `(master, index)`, so partitioning work across any number
/// of workers reproduces the same per-task streams.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index))
}

/// Two-level derivation: a named stream (split selection, run index, shard)
/// under a master seed.
pub fn derive_seed2(master: u64, stream: u64, index: u64) -> u64 {
    mix64(derive_seed(master, stream) ^ mix64(index ^ 0xA076_1D64_78BD_642F))
}

/// The RNG used throughout; explicit so results are reproducible across
/// platforms and releases.
pub type Prng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Prng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One standard normal draw.
pub fn standard_normal(rng: &mut Prng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gaussian truncated at `bound` standard deviations by resampling.
pub fn truncated_normal(rng: &mut Prng, bound: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= bound {
            return z;
        }
    }
}

/// A random permutation of `0..n` (Fisher–Yates).
pub fn permutation(rng: &mut Prng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// The first `k` elements of a random permutation of `0..n`
/// (partial Fisher–Yates); a uniform k-subset in random order.
pub fn choose_indices(rng: &mut Prng, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot choose {k} of {n}");
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}
