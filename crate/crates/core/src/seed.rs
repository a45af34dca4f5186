//! Seed derivation. Every random stream in the crate is a ChaCha8 generator whose
//! seed is derived from `(seed, stream)` by [`sub_seed`], so independent streams
//! never share state and reruns reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod stream {
    pub const TRAIN_DATA: u64 = 1;
    pub const TEST_DATA: u64 = 2;
    pub const MODEL_INIT: u64 = 3;
    pub const PROJECTOR_INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const BASIS: u64 = 6;
    pub const NOISE_POOL: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `stream` of `seed`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, stream))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        assert_ne!(sub_seed(1, stream::TRAIN_DATA), sub_seed(1, stream::TEST_DATA));
        assert_ne!(sub_seed(1, stream::TRAIN_DATA), sub_seed(2, stream::TRAIN_DATA));
        assert_eq!(sub_seed(9, 3), sub_seed(9, 3));
    }
}
