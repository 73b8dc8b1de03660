//! Seed derivation and the counter-based mixer used for replayable randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream type used across the simulator.
pub type SimRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer. Bijective on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a parent seed with a stream label into an independent child seed.
#[inline]
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(mix64(seed) ^ stream.wrapping_mul(GOLDEN).rotate_left(17))
}

/// Uniform in `[0, 1)` from the top 53 bits of a hash value.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn stream(seed: u64, label: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, label))
}

/// Stream labels, one per independent consumer of a scenario seed.
pub mod labels {
    pub const NETWORK: u64 = 1;
    pub const CHURN: u64 = 2;
    pub const SCHEDULER: u64 = 3;
    pub const TELEMETRY_BASE: u64 = 1 << 32;
}
