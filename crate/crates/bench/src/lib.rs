//! Fixtures shared by the criterion benches.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use slime_core::lars::{standardize, DesignMatrix, StandardizedDesign};

/// Standardized weighted regression problem with a sparse true signal.
pub fn weighted_problem(seed: u64, n: usize, p: usize) -> (StandardizedDesign, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<f64> = (0..n)
        .map(|i| (0..p.min(5)).map(|j| (j + 1) as f64 * x[(i, j)]).sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let design = DesignMatrix::with_default_names(x).expect("finite design");
    let std = standardize(&design, &weights).expect("positive weights");
    let ty = std.transform_response(&y).expect("matching length");
    (std, ty)
}
