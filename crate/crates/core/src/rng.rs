//! Seeded random streams.
//!
//! All randomness flows through ChaCha8 generators. Gaussian draws use the
//! ziggurat sampler behind `rand_distr::StandardNormal`. ChaCha output is
//! platform independent, so streams replicate bit-for-bit for a fixed seed;
//! only the floating-point arithmetic downstream may differ across targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed for a named sub-stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn gaussian(rng: &mut SeededRng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * sigma
}

pub fn uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}
