//! Counter-keyed random streams.
//!
//! Every perturbation row draws from its own ChaCha stream selected by the
//! row index, so the rows of a dataset depend only on `(seed, row)`. Growing
//! a dataset therefore never changes the rows that were already drawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random source for row `row` under `seed`.
pub fn row_stream(seed: u64, row: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row);
    rng
}

/// Fill `out` with i.i.d. standard normals for row `row`.
pub fn standard_normal_row(seed: u64, row: u64, out: &mut [f64]) {
    let mut rng = row_stream(seed, row);
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Derive the `index`-th child seed of `base` (SplitMix64 finalizer).
pub fn split_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
