//! Deterministic random streams keyed by `(seed, tags...)`.
//!
//! Every replicate of every resampling loop draws from its own stream, so
//! results do not depend on the order in which replicates are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Seed used by the command line when none is given.
pub const DEFAULT_SEED: u64 = 20_181_126;

/// Stream tags separating the resampling loops.
pub mod tag {
    pub const WEIGHT_BOOTSTRAP: u64 = 0x5745_4947;
    pub const PRIMITIVE_BOOTSTRAP: u64 = 0x5052_494d;
    pub const TWO_SAMPLE_DRAW: u64 = 0x4452_4157;
    pub const PLACEBO_DRAW: u64 = 0x504c_4143;
    pub const PLACEBO_WEIGHT: u64 = 0x504c_5747;
    pub const POPULATION: u64 = 0x504f_5055;
    pub const CELL: u64 = 0x4345_4c4c;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a list of tags into a 64-bit key.
pub fn derive_key(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t)))
}

/// A reproducible generator for the stream `(seed, tags...)`.
pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, tags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, &[1, 2]).random();
        let b: u64 = stream(7, &[1, 2]).random();
        let c: u64 = stream(7, &[2, 1]).random();
        let d: u64 = stream(8, &[1, 2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
