//! Seeded, splittable randomness. Every stochastic operation takes an
//! explicit generator; parallel work derives an independent ChaCha8 stream
//! per (purpose, index) from the configured seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PipelineRng = ChaCha8Rng;

/// Stream namespaces so that different consumers never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Poses = 1,
    Detector = 2,
    Ransac = 3,
    QueryOrder = 4,
    Testing = 15,
}

pub fn stream_rng(seed: u64, purpose: Purpose, index: u64) -> PipelineRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) | (index & ((1 << 56) - 1)));
    rng
}
