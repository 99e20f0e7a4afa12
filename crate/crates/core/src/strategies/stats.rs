use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const MIN_WILCOXON_PAIRS: usize = 5;
pub const EXACT_WILCOXON_MAX: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub statistic: f64,
    /// Number of nonzero differences.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Ranks `1..=n` of `values` with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their mean
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Signed-rank test of `H1: differences are shifted above zero`.
///
/// Zero differences are dropped. Up to 20 remaining pairs the p-value
/// `P(W+ >= observed)` comes from the exact null distribution of the
/// observed (possibly tied) ranks; beyond that from the normal approximation
/// with tie and continuity corrections.
pub fn wilcoxon_one_sided(differences: &[f64]) -> Result<WilcoxonResult> {
    let nonzero: Vec<f64> = differences.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nonzero.len();
    if n < MIN_WILCOXON_PAIRS {
        return Err(Error::TooFewPairs(n));
    }
    if nonzero.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument("non-finite difference".into()));
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let statistic: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    let (p_value, exact) = if n <= EXACT_WILCOXON_MAX {
        (exact_upper_tail(&ranks, statistic), true)
    } else {
        (normal_upper_tail(&ranks, &abs, statistic), false)
    };
    Ok(WilcoxonResult {
        statistic,
        n,
        p_value,
        exact,
    })
}

/// Convenience wrapper for paired samples, testing `a > b`.
pub fn wilcoxon_paired(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} paired values", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    wilcoxon_one_sided(&d)
}

fn exact_upper_tail(ranks: &[f64], statistic: f64) -> f64 {
    // average ranks are multiples of 1/2, so doubled ranks are integers
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let observed = (2.0 * statistic).round() as usize;
    let tail: u64 = counts[observed..].iter().sum();
    tail as f64 / (1u64 << ranks.len()) as f64
}

fn normal_upper_tail(ranks: &[f64], abs: &[f64], statistic: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return if statistic > mean { 0.0 } else { 1.0 };
    }
    let z = (statistic - mean - 0.5) / var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("valid parameters");
    1.0 - std_normal.cdf(z)
}

/// Sample Pearson correlation.
pub fn pearson_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::NotEnoughData(format!("correlation needs 2 values, got {}", a.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}
