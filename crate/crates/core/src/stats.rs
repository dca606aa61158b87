//! Summary statistics and rank tests over error distributions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 for a single value.
    pub std: f64,
}

impl Summary {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary { n, mean, std })
    }
}

/// 1-based ranks with ties given their average (mid) rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of midranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (midranks(a), midranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Pooled size at or below which [`mann_whitney_u`] enumerates exactly.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `U` of the first sample: pairs `(a, b)` with `a > b`, ties counting one half.
    pub u: f64,
    pub p_two_sided: f64,
    /// P(U <= observed) under the null: evidence that `a` tends to be smaller.
    pub p_less: f64,
    /// P(U >= observed) under the null.
    pub p_greater: f64,
    pub exact: bool,
}

fn u_statistic(ranks: &[f64], in_a: impl Iterator<Item = bool>, n_a: usize) -> f64 {
    let rank_sum: f64 = ranks.iter().zip(in_a).filter(|(_, a)| *a).map(|(r, _)| r).sum();
    rank_sum - (n_a * (n_a + 1)) as f64 / 2.0
}

/// Two-sided Mann-Whitney U test with midrank ties: exact when the pooled
/// size is at most [`EXACT_LIMIT`], normal approximation otherwise.
///
/// # Panics
/// If either sample is empty.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> MannWhitney {
    if a.len() + b.len() <= EXACT_LIMIT {
        mann_whitney_exact(a, b)
    } else {
        mann_whitney_normal(a, b)
    }
}

/// Exact permutation distribution of `U` over every relabeling of the pooled ranks.
pub fn mann_whitney_exact(a: &[f64], b: &[f64]) -> MannWhitney {
    assert!(!a.is_empty() && !b.is_empty(), "both samples must be nonempty");
    let n = a.len() + b.len();
    assert!(n <= 20, "exact enumeration is limited to 20 pooled values");
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let n_a = a.len();
    let observed = u_statistic(&ranks, (0..n).map(|i| i < n_a), n_a);
    let center = (n_a * b.len()) as f64 / 2.0;
    let tol = 1e-9;

    let (mut total, mut le, mut ge, mut extreme) = (0u64, 0u64, 0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n_a {
            continue;
        }
        let u = u_statistic(&ranks, (0..n).map(|i| mask >> i & 1 == 1), n_a);
        total += 1;
        if u <= observed + tol {
            le += 1;
        }
        if u >= observed - tol {
            ge += 1;
        }
        if (u - center).abs() >= (observed - center).abs() - tol {
            extreme += 1;
        }
    }
    let t = total as f64;
    MannWhitney {
        u: observed,
        p_two_sided: extreme as f64 / t,
        p_less: le as f64 / t,
        p_greater: ge as f64 / t,
        exact: true,
    }
}

/// Normal approximation with tie-corrected variance and continuity correction.
pub fn mann_whitney_normal(a: &[f64], b: &[f64]) -> MannWhitney {
    assert!(!a.is_empty() && !b.is_empty(), "both samples must be nonempty");
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let u = u_statistic(&ranks, (0..pooled.len()).map(|i| i < a.len()), a.len());

    let n = n1 + n2;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let mean = n1 * n2 / 2.0;
    if var <= 0.0 {
        return MannWhitney {
            u,
            p_two_sided: 1.0,
            p_less: 1.0,
            p_greater: 1.0,
            exact: false,
        };
    }
    let sd = var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let z_two = ((u - mean).abs() - 0.5).max(0.0) / sd;
    let p_less = std_normal.cdf((u - mean + 0.5) / sd);
    let p_greater = 1.0 - std_normal.cdf((u - mean - 0.5) / sd);
    MannWhitney {
        u,
        p_two_sided: (2.0 * (1.0 - std_normal.cdf(z_two))).min(1.0),
        p_less,
        p_greater,
        exact: false,
    }
}
