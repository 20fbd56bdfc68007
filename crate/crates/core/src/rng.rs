//! Counter-addressed random streams.
//!
//! Every draw is a pure function of `(seed, stream, step)`: the stream picks a
//! ChaCha8 nonce and the step picks a disjoint block of the keystream. Results
//! therefore do not depend on how work is split between threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Words of keystream reserved for one `(stream, step)` cell.
const STEP_STRIDE: u128 = 1 << 32;

/// Generator positioned at the start of cell `(stream, step)`.
pub fn cell_rng(seed: u64, stream: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(step as u128 * STEP_STRIDE);
    rng
}

/// Fills `out` with independent standard normals from cell `(stream, step)`.
pub fn fill_normals(seed: u64, stream: u64, step: u64, out: &mut [f64]) {
    let mut rng = cell_rng(seed, stream, step);
    for v in out {
        *v = StandardNormal.sample(&mut rng);
    }
}

/// Derives an independent seed for a named sub-experiment.
pub fn derive_seed(seed: u64, domain: u64) -> u64 {
    let mut z = seed ^ domain.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
