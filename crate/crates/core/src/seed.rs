//! Counter-based seed derivation so that every chain, tree, replicate and
//! split owns an independent, reproducible random stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a sequence of keys into a new 64-bit seed.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k.wrapping_add(0xA5A5_A5A5))))
}

/// A generator keyed on `(seed, keys...)`.
pub fn rng_for(seed: u64, keys: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, keys))
}

/// Stream tags keep different uses of the same base seed apart.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const FLOW_INIT: u64 = 2;
    pub const FLOW_SHUFFLE: u64 = 3;
    pub const CHAIN: u64 = 4;
    pub const FOREST: u64 = 5;
    pub const MLP: u64 = 6;
    pub const RESPONSE: u64 = 7;
    pub const FEATURES: u64 = 8;
    pub const TIES: u64 = 9;
    pub const NOISE: u64 = 10;
    pub const LASSO_FOLDS: u64 = 11;
    pub const GIBBS: u64 = 12;
    pub const REPLICATE: u64 = 13;
    pub const FLOW_SAMPLE: u64 = 14;
}
