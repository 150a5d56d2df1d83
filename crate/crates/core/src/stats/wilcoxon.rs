use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::average_ranks;
use crate::error::{Error, Result};

/// Largest non-zero count for which the p-value comes from the exact null
/// distribution instead of the normal approximation.
pub const EXACT_MAX_N: usize = 50;

/// Below this many non-zero differences the p-value is flagged unreliable.
pub const MIN_RELIABLE_N: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Non-zero differences.
    pub n: usize,
    pub w_plus: f64,
    pub z: f64,
    /// `z / sqrt(n)`; positive when the first sample is higher.
    pub r: f64,
    /// Two-sided.
    pub p: f64,
    pub exact: bool,
    pub unreliable: bool,
}

/// Signed-rank test on paired differences. Zeros are dropped and tied
/// magnitudes share average ranks. `z` uses the untied variance
/// `n(n+1)(2n+1)/24`.
pub fn wilcoxon_effect(d: &[f64]) -> Result<Wilcoxon> {
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Stats("non-finite paired difference".into()));
    }
    let nz: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return Err(Error::Stats("all paired differences are zero".into()));
    }
    let mags: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&mags);
    let w_plus: f64 = nz
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .fold(0.0, |acc, (_, r)| acc + r);
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let sigma = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0).sqrt();
    let z = (w_plus - mu) / sigma;
    let exact = n <= EXACT_MAX_N;
    let p = if exact {
        exact_p(&ranks, w_plus)
    } else {
        erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(Wilcoxon {
        n,
        w_plus,
        z,
        r: z / nf.sqrt(),
        p,
        exact,
        unreliable: n < MIN_RELIABLE_N,
    })
}

/// Two-sided p under the permutation null: each rank carries a `+` sign
/// with probability 1/2. Ranks are half-integers, so doubled ranks index a
/// subset-sum count table.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &k in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + k] += counts[s];
            }
        }
        reach += k;
    }
    // index s is a doubled W+; compare |2s - total| to stay in integers
    let obs = ((4.0 * w_plus).round() as i64 - total as i64).abs();
    let extreme: f64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * *s as i64 - total as i64).abs() >= obs)
        .map(|(_, c)| c)
        .sum();
    (extreme / 2f64.powi(ranks.len() as i32)).min(1.0)
}
