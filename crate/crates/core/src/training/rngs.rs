//! Deterministic rng derivation. Every consumer gets a stream derived from
//! `(seed, lane, step)`, so resuming at step `k` replays exactly the rngs
//! an uninterrupted run would have used.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const LANE_INIT_GEN: u64 = 1;
pub const LANE_INIT_DISC: u64 = 2;
pub const LANE_INIT_DEC: u64 = 3;
pub const LANE_INIT_ENCODER: u64 = 4;
pub const LANE_INIT_TOWER: u64 = 5;
pub const LANE_INIT_EXTRACTOR: u64 = 6;
pub const LANE_PRETRAIN_ENCODER: u64 = 7;
pub const LANE_PRETRAIN_EXTRACTOR: u64 = 8;
pub const LANE_DATA: u64 = 9;

pub fn lane_rng(seed: u64, lane: u64, step: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&lane.to_le_bytes());
    bytes[16..24].copy_from_slice(&step.to_le_bytes());
    bytes[24..32].copy_from_slice(b"faganrng");
    ChaCha8Rng::from_seed(bytes)
}
