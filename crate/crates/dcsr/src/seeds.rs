//! Deterministic derivation of independent RNG streams.
//!
//! Every sample-level random draw in the crate uses a stream derived from a
//! master seed plus a path of indices (sample index, grid cell, repeat, ...),
//! so parallel evaluation order never changes the results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the crate.
pub type Stream = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mix a master seed and a path of indices into one 64-bit stream id.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = master ^ 0xd1b54a32d192ed03;
    let mut acc = splitmix64(&mut state);
    for &part in path {
        state ^= part.wrapping_mul(0x9e3779b97f4a7c15);
        acc ^= splitmix64(&mut state);
    }
    acc
}

/// Build an independent RNG stream for (master seed, index path).
pub fn stream(master: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(7, &[1, 2, 3]);
        let b = derive_seed(7, &[1, 2, 3]);
        assert_eq!(a, b);
        assert_ne!(a, derive_seed(7, &[1, 2, 4]));
        assert_ne!(a, derive_seed(8, &[1, 2, 3]));
        // path boundaries matter
        assert_ne!(derive_seed(7, &[1, 0]), derive_seed(7, &[1]));
    }
}
