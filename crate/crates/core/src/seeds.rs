//! Every random stream is derived from one root seed, one ChaCha stream per
//! subsystem, so that adding draws in one subsystem never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    SourceBatches = 2,
    TargetBatches = 3,
    Negatives = 4,
    Clustering = 5,
}

/// Generator for `stream`, further separated by `domain`.
pub fn rng_for(root: u64, stream: Stream, domain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(((stream as u64) << 32) | domain as u64);
    rng
}
