//! Seed plumbing. A single 64-bit seed flows from the CLI into every
//! stochastic operation; each call site derives its own stream with a salt so
//! that independent stages do not share RNG state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn seeded(seed: u64, salt: u64) -> ChaCha8Rng {
    // splitmix64-style mix so nearby seeds do not produce nearby streams
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}
