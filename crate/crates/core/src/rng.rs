//! Portable seeded randomness.
//!
//! Every random draw in the crate comes from xoshiro256++ seeded through
//! SplitMix64 (`seed_from_u64`). Independent streams for one user seed are
//! obtained by mixing a stream index into the seed, see [`stream_rng`].
//! Shuffles use Fisher–Yates with multiply-shift range reduction, so a fold
//! can be reproduced from this description alone.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type PortableRng = Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Generator for stream `stream` of user seed `seed`.
///
/// The 64-bit seed handed to SplitMix64 is `seed XOR (stream + 1)·γ` where
/// `γ = 0x9E3779B97F4A7C15` (wrapping arithmetic).
pub fn stream_rng(seed: u64, stream: u64) -> PortableRng {
    let mixed = seed ^ stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA);
    PortableRng::seed_from_u64(mixed)
}

/// Uniform integer in `0..bound` as `(next_u64 · bound) >> 64`.
#[inline]
pub fn below(rng: &mut impl RngCore, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    ((rng.next_u64() as u128 * bound as u128) >> 64) as u64
}

/// In-place Fisher–Yates: for `i` from `len-1` down to `1`, swap `i` with
/// `below(i + 1)`.
pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

/// Draws `len` standard normal variates.
pub fn gaussian_vec(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}
