//! Pinned random number generation.
//!
//! All randomness in the crate (dataset synthesis, PGD random starts,
//! corruption noise, weight initialisation, shuffling) flows through
//! ChaCha8 keyed by a `u64` seed. The 64-bit seed is expanded to a 256-bit
//! key with `SeedableRng::seed_from_u64` (a PCG32 stream, fixed by
//! `rand_core`), and independent substreams are selected with the ChaCha
//! stream id. Both are algorithmically specified, so outputs do not depend
//! on platform or thread layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Generator type used throughout the crate.
pub type LabRng = ChaCha8Rng;

/// Generator for `seed` on substream `stream`.
pub fn substream(seed: u64, stream: u64) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn unit(rng: &mut LabRng) -> f64 {
    rng.random::<f64>()
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform(rng: &mut LabRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

pub fn standard_normal(rng: &mut LabRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Mixes several integers into a single seed (SplitMix64 finaliser).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = splitmix(h);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
