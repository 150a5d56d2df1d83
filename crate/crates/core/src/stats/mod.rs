//! Cohort-level comparison of explanation methods.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod ranks;
mod table;
mod wilcoxon;

pub use ranks::average_ranks;
pub use table::{
    aggregate_effects, compare_methods, AggregatedEffects, ComparisonTable, GroupEffects,
    Grouping, MethodRank, PairComparison, SettingKey, ALPHA,
};
pub use wilcoxon::{wilcoxon_effect, Wilcoxon, EXACT_MAX_N, MIN_RELIABLE_N};

/// Normal-consistency constant for the MAD.
pub const MAD_SCALE: f64 = 1.4826;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// `median(d) / (1.4826 MAD(d))`. A zero MAD yields `+inf` or `-inf` by the
/// sign of the median, or 0 when the median is 0 too. Empty input gives NaN.
pub fn median_mad_effect(d: &[f64]) -> f64 {
    if d.is_empty() {
        return f64::NAN;
    }
    let mut v = d.to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = d.iter().map(|x| (x - med).abs()).collect();
    let mad = median(&mut dev);
    if mad == 0.0 {
        return if med > 0.0 {
            f64::INFINITY
        } else if med < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
    }
    med / (MAD_SCALE * mad)
}

/// Benjamini-Hochberg adjusted p-values, returned in input order.
pub fn fdr_adjust(pvals: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Stats(format!("p-value {p} outside [0, 1]")));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running = 1.0f64;
    for (pos, &i) in order.iter().enumerate().rev() {
        // m / rank >= 1; the max undoes rounding below p
        let q = (pvals[i] * m as f64 / (pos + 1) as f64).max(pvals[i]);
        running = running.min(q);
        out[i] = running;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Magnitude {
    Negligible,
    WeakModerate,
    Strong,
}

impl fmt::Display for Magnitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Magnitude::Negligible => "negligible",
            Magnitude::WeakModerate => "weak-moderate",
            Magnitude::Strong => "strong",
        })
    }
}

/// `|r| < 0.2` negligible, `0.2..=0.5` weak-moderate, above strong.
pub fn magnitude_class(r: f64) -> Magnitude {
    let a = r.abs();
    if a < 0.2 {
        Magnitude::Negligible
    } else if a <= 0.5 {
        Magnitude::WeakModerate
    } else {
        Magnitude::Strong
    }
}

/// Mean per-bag rank of each method column; the highest SRG in a bag gets
/// rank 1 and ties share their average rank.
pub fn mean_rank_scores(srg: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = match srg.first() {
        Some(row) if !row.is_empty() => row.len(),
        _ => return Err(Error::Stats("empty SRG matrix".into())),
    };
    let mut sums = vec![0.0; m];
    for (b, row) in srg.iter().enumerate() {
        if row.len() != m || row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Stats(format!("missing SRG cell in bag row {b}")));
        }
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        for (s, r) in sums.iter_mut().zip(average_ranks(&neg)) {
            *s += r;
        }
    }
    Ok(sums.into_iter().map(|s| s / srg.len() as f64).collect())
}
