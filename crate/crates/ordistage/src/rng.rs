//! Deterministic seed derivation.
//!
//! Every stochastic site in the pipeline draws from its own ChaCha stream
//! whose seed is mixed from the experiment seed plus structural tags (fold,
//! epoch, sample index, ...). This keeps per-sample work order-independent
//! and reproducible bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed with structural tags into a derived seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(base);
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t.wrapping_add(0x51ed_270b)));
    }
    state
}

/// ChaCha stream for a derived seed.
pub fn derived_rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
