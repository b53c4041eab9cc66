//! Deterministic seed derivation. Every stochastic stage derives its seed
//! from (parent seed, stage tag, index), so results are identical under any
//! degree of parallelism and any execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_SCHEDULE: u64 = 1;
pub const TAG_ROUND: u64 = 2;
pub const TAG_REPLICATE: u64 = 3;
pub const TAG_EVAL: u64 = 4;
pub const TAG_KAPPA: u64 = 5;
pub const TAG_BOOTSTRAP: u64 = 6;
pub const TAG_WELFARE: u64 = 7;
pub const TAG_ESTIMATION: u64 = 8;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed for stage `tag` at position `index`.
pub fn derive(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ tag.wrapping_mul(GOLDEN)) ^ index.wrapping_mul(GOLDEN))
}

/// Root RNG for one simulated round.
pub fn round_rng(run_seed: u64, round: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(run_seed, TAG_ROUND, round as u64))
}

/// Independent substream for one agent within a round. Stream zero is
/// reserved for round-level draws.
pub fn agent_rng(round_rng: &ChaCha8Rng, agent: usize) -> ChaCha8Rng {
    let mut rng = round_rng.clone();
    rng.set_stream(agent as u64 + 1);
    rng
}
