//! Seed derivation for independent, replayable random substreams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a seed with a list of keys into one well-mixed 64-bit seed.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(seed), |acc, &k| mix64(acc ^ mix64(k)))
}

pub fn substream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, keys))
}

/// Stream tags so that different consumers of one episode seed never collide.
pub mod stream {
    pub const DETECT: u64 = 0xD37EC7;
    pub const POLICY: u64 = 0x9011C7;
    pub const GENERATE: u64 = 0x6E7E2A;
    pub const TRAIN: u64 = 0x7A1A;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn substreams_are_replayable_and_distinct() {
        let a: u64 = substream(7, &[stream::DETECT, 3]).gen();
        let b: u64 = substream(7, &[stream::DETECT, 3]).gen();
        let c: u64 = substream(7, &[stream::DETECT, 4]).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
