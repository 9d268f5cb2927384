//! Seeded random streams.
//!
//! Every stochastic stage derives its generator from the run seed, a stage
//! label and an index, so a stage produces the same draws whether it runs
//! alone or inside the full pipeline, on any number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, used only to turn stage labels into stream keys.
fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Independent generator for `(seed, label, index)`.
pub fn substream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(label));
    rng.set_stream(index);
    rng
}

/// Derive a child seed for a named sub-stage of a run.
pub fn child_seed(seed: u64, label: &str) -> u64 {
    use rand::RngCore;
    substream(seed, label, 0).next_u64()
}
