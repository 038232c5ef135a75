//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from ChaCha8 keyed by a user
//! seed. Independent consumers get independent ChaCha streams of the same
//! key: sample `t` of a sampling run uses stream `t`, restart `k` of power
//! round `j` uses stream `(j << 32) | k`, and so on. Because the stream is a
//! pure function of `(seed, index)`, parallel work is reproducible no matter
//! how it is scheduled, and outputs are identical across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream index for a two-level split (round, item).
pub fn stream_id(round: u32, item: u32) -> u64 {
    ((round as u64) << 32) | item as u64
}

/// Stream used by model generators, kept away from the sample streams.
pub const MODEL_STREAM: u64 = u64::MAX;
