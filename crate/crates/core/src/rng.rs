//! Reproducible random streams derived from a master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent stream `id` of master seed `seed`; identical for any thread schedule.
pub fn stream(seed: u64, id: u64) -> StreamRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Splits `total` trials into blocks of at most `block`; returns (block id, size) pairs.
pub fn blocks(total: u64, block: u64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let mut done = 0;
    let mut id = 0;
    while done < total {
        let n = block.min(total - done);
        out.push((id, n));
        done += n;
        id += 1;
    }
    out
}
