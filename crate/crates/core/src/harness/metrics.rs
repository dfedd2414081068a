//! Error summaries over signed error lists.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// Mean of |e|.
    pub mae: f64,
    /// Population standard deviation of |e|.
    pub sd: f64,
    /// 95th percentile of |e|, linear interpolation between order statistics.
    pub p95: f64,
    pub n: usize,
}

pub fn compute_metrics(errors: &[f64]) -> Result<ErrorMetrics> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("metrics need at least one error".into()));
    }
    let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    let n = abs.len() as f64;
    let mae = abs.iter().sum::<f64>() / n;
    let var = abs.iter().map(|a| (a - mae).powi(2)).sum::<f64>() / n;
    abs.sort_by(f64::total_cmp);
    Ok(ErrorMetrics {
        mae,
        sd: var.sqrt(),
        p95: percentile_sorted(&abs, 0.95),
        n: abs.len(),
    })
}

/// Quantile `q ∈ [0,1]` of ascending `sorted` at rank `q·(n−1)`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let r = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = r.floor() as usize;
    let hi = r.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (r - lo as f64)
}

/// Fraction of |e| ≤ t for each threshold.
pub fn accumulated_error_distribution(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("error distribution needs at least one error".into()));
    }
    let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| abs.partition_point(|&a| a <= t) as f64 / n)
        .collect())
}

/// `count` evenly spaced thresholds from 0 to `max`.
pub fn thresholds(max: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    let mut t: Vec<f64> = (0..count).map(|i| max * i as f64 / (count - 1) as f64).collect();
    t[count - 1] = max;
    t
}

/// Ranks starting at 1, ties share their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
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

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation; 0 when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput("rank correlation needs at least two pairs".into()));
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}
