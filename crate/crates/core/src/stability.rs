//! Entry test for LARS decisions.
//!
//! Two candidate features are compared through the per-observation products
//! `r_t x_ti` and `r_t x_tj`. Their means are the correlations the solver
//! ranks on, and the CLT gives an approximate normal law for the gap between
//! them. A gap that would likely survive a regeneration of the perturbations
//! passes; otherwise the test recommends how many samples would make the
//! observed gap significant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::{normal_upper_tail, upper_quantile_unchecked};

/// Fallback growth when the sample-size formula is undefined.
pub const DEFAULT_GROWTH_FACTOR: f64 = 4.0;

/// Means and unbiased covariance of the product pairs `(r x_i, r x_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductCovariance {
    pub c1_hat: f64,
    pub c2_hat: f64,
    pub sigma11: f64,
    pub sigma22: f64,
    pub sigma12: f64,
    pub n: usize,
}

impl ProductCovariance {
    /// `sigma11 + sigma22 - 2 sigma12`, clamped at zero.
    pub fn variance_of_difference(&self) -> f64 {
        (self.sigma11 + self.sigma22 - 2.0 * self.sigma12).max(0.0)
    }
}

/// Outcome of one entry test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDecision {
    pub statistic_t: f64,
    pub p_value: f64,
    pub significant: bool,
    /// Sample size the test ran at.
    pub n: usize,
    /// Sample size needed for significance (`n` itself when significant).
    pub recommended_n: usize,
    /// Features compared, top candidate first. Filled in by the caller.
    pub compared: Option<(String, String)>,
    /// Path step at which the test ran. Filled in by the caller.
    pub step: Option<usize>,
}

pub fn product_covariance(
    residual: &[f64],
    col_i: &[f64],
    col_j: &[f64],
) -> Result<ProductCovariance> {
    let n = residual.len();
    if col_i.len() != n || col_j.len() != n {
        return Err(Error::validation(format!(
            "product covariance inputs have lengths {}, {}, {}",
            n,
            col_i.len(),
            col_j.len()
        )));
    }
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "product covariance needs n >= 2, got {n}"
        )));
    }
    let nf = n as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for t in 0..n {
        s1 += residual[t] * col_i[t];
        s2 += residual[t] * col_j[t];
    }
    let (m1, m2) = (s1 / nf, s2 / nf);
    let (mut v11, mut v22, mut v12) = (0.0, 0.0, 0.0);
    for t in 0..n {
        let a = residual[t] * col_i[t] - m1;
        let b = residual[t] * col_j[t] - m2;
        v11 += a * a;
        v22 += b * b;
        v12 += a * b;
    }
    let d = nf - 1.0;
    Ok(ProductCovariance {
        c1_hat: m1,
        c2_hat: m2,
        sigma11: v11 / d,
        sigma22: v22 / d,
        sigma12: v12 / d,
        n,
    })
}

/// The entry test at level `alpha`, with the default fallback growth.
pub fn entry_test(cov: &ProductCovariance, alpha: f64) -> TestDecision {
    entry_test_with(cov, alpha, DEFAULT_GROWTH_FACTOR)
}

/// Test whether `c1_hat > c2_hat` would persist under regeneration.
///
/// `t = (c1 - c2) - Z_alpha * sqrt(2 v / n)` with `v` the variance of the
/// product difference. When `v == 0` the gap is deterministic: a positive gap
/// is significant with p-value 0, an exact tie is not, with p-value 0.5.
pub fn entry_test_with(cov: &ProductCovariance, alpha: f64, growth_factor: f64) -> TestDecision {
    let n = cov.n;
    let gap = cov.c1_hat - cov.c2_hat;
    let v = cov.variance_of_difference();
    let z_alpha = upper_quantile_unchecked(alpha);
    let spread = (2.0 * v / n as f64).sqrt();
    let statistic_t = gap - z_alpha * spread;

    let (p_value, significant) = if spread == 0.0 {
        if gap > 0.0 {
            (0.0, true)
        } else {
            (0.5, false)
        }
    } else {
        let p = normal_upper_tail(gap / spread);
        (p, statistic_t >= 0.0)
    };
    let recommended_n = if significant {
        n
    } else {
        required_sample_size_with(n, p_value, alpha, growth_factor)
    };
    TestDecision {
        statistic_t,
        p_value,
        significant,
        n,
        recommended_n,
        compared: None,
        step: None,
    }
}

/// Unrounded `n (Z_alpha / Z_p)^2`; `None` when `p >= 0.5`.
pub fn sample_size_ratio(n: usize, p_value: f64, alpha: f64) -> Option<f64> {
    if !(p_value > 0.0 && p_value < 0.5) {
        return None;
    }
    let z_alpha = upper_quantile_unchecked(alpha);
    let z_p = upper_quantile_unchecked(p_value);
    Some(n as f64 * (z_alpha / z_p).powi(2))
}

pub fn required_sample_size(n: usize, p_value: f64, alpha: f64) -> usize {
    required_sample_size_with(n, p_value, alpha, DEFAULT_GROWTH_FACTOR)
}

/// Samples needed for the observed gap to become significant, always `> n`.
pub fn required_sample_size_with(n: usize, p_value: f64, alpha: f64, growth_factor: f64) -> usize {
    let raw = sample_size_ratio(n, p_value, alpha).unwrap_or(growth_factor * n as f64);
    let rounded = if raw.is_finite() && raw < usize::MAX as f64 {
        raw.ceil() as usize
    } else {
        usize::MAX
    };
    rounded.max(n.saturating_add(1))
}

/// Top candidate against every other candidate, Bonferroni style: reject
/// when the per-pair p-values sum below `alpha`.
///
/// `compared` on the result names the pair with the largest p-value, which is
/// also the pair that drives the sample-size recommendation (at `alpha/(m-1)`).
pub fn bonferroni_entry_test(
    covs: &[ProductCovariance],
    alpha: f64,
    growth_factor: f64,
) -> Result<(TestDecision, usize)> {
    if covs.is_empty() {
        return Err(Error::validation("multiple testing needs at least one competitor"));
    }
    let n = covs[0].n;
    let pairs: Vec<TestDecision> = covs
        .iter()
        .map(|c| entry_test_with(c, alpha, growth_factor))
        .collect();
    let total: f64 = pairs.iter().map(|d| d.p_value).sum();
    let (worst, worst_p) = pairs
        .iter()
        .enumerate()
        .map(|(i, d)| (i, d.p_value))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let significant = total < alpha;
    let per_pair_alpha = alpha / covs.len() as f64;
    let recommended_n = if significant {
        n
    } else {
        required_sample_size_with(n, worst_p, per_pair_alpha, growth_factor)
    };
    Ok((
        TestDecision {
            statistic_t: alpha - total,
            p_value: total.min(1.0),
            significant,
            n,
            recommended_n,
            compared: None,
            step: None,
        },
        worst,
    ))
}
