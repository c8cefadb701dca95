//! Seeded random streams.
//!
//! Every Monte Carlo path draws from its own generator, derived from
//! `(seed, stream, index)`. Output for a fixed seed therefore does not
//! depend on how work is split across threads.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type PathRng = Xoshiro256PlusPlus;

/// Stream tags used to keep unrelated consumers of one seed apart.
pub mod stream {
    pub const TRAIN: u64 = 0x7472_6169_6e00_0000;
    pub const TEST: u64 = 0x7465_7374_0000_0000;
    pub const ORACLE: u64 = 0x6f72_6163_6c65_0000;
    pub const PRICE: u64 = 0x7072_6963_6500_0000;
    pub const CORRELATION: u64 = 0x636f_7272_0000_0000;
    pub const INIT: u64 = 0x696e_6974_0000_0000;
    pub const SIMULATE: u64 = 0x7369_6d00_0000_0000;
    pub const EVAL: u64 = 0x6576_616c_0000_0000;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with any number of integer coordinates into a new seed.
pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Generator for item `index` of the given stream.
pub fn substream(seed: u64, stream: u64, index: u64) -> PathRng {
    PathRng::seed_from_u64(derive_seed(seed, &[stream, index]))
}
