//! The single pseudo-random generator used across the crate: ChaCha with 8
//! rounds (`rand_chacha` 0.3), seeded through `seed_from_u64`, with
//! independent streams chosen by `set_stream`. Its output is fixed by the
//! algorithm, so seeds reproduce across platforms and thread counts.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Name recorded in reports next to every seed.
pub const PRNG_NAME: &str = "chacha8 (rand_chacha 0.3, seed_from_u64)";

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministic substream `stream` of the generator seeded by `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fold a tuple of indices into one seed with the SplitMix64 finalizer.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x6a09_e667_f3bc_c908;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| substream(7, 3).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(substream(7, 3).next_u64(), substream(7, 4).next_u64());
        assert_ne!(substream(7, 3).next_u64(), substream(8, 3).next_u64());
        // frozen first output pins the generator version
        assert_eq!(seeded(0).next_u64(), 0xb585_f767_a79a_3b6c);
    }

    #[test]
    fn derived_seeds_depend_on_order() {
        assert_ne!(derive_seed(&[1, 2, 3]), derive_seed(&[1, 3, 2]));
        assert_ne!(derive_seed(&[0]), derive_seed(&[0, 0]));
        assert_eq!(derive_seed(&[5, 9]), derive_seed(&[5, 9]));
    }
}
