//! Per-bin accuracy, Wilson intervals and accuracy-vs-similarity trends.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simdrift::{bin_midpoint, bin_range, NUM_BINS};

pub const DEFAULT_Z: f64 = 1.96;
/// Bins with fewer scored variants are flagged as low-support.
pub const MIN_BIN_N: usize = 10;

/// Wilson score interval before clamping to [0, 1].
pub fn wilson_unclamped(k: usize, n: usize, z: f64) -> Result<(f64, f64)> {
    if n == 0 || k > n {
        return Err(Error::Domain(format!("wilson interval needs 0 <= k <= n, n >= 1 (k={k}, n={n})")));
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    Ok((center - half, center + half))
}

pub fn wilson_interval(k: usize, n: usize, z: f64) -> Result<(f64, f64)> {
    let (lo, hi) = wilson_unclamped(k, n, z)?;
    Ok((lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub bin_index: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub n: usize,
    pub k: usize,
    pub accuracy_percent: Option<f64>,
    pub wilson_low: Option<f64>,
    pub wilson_high: Option<f64>,
    pub low_support: bool,
}

/// One summary per bin, empty bins included with no accuracy.
pub fn bin_accuracy(records: &[(usize, u8)], z: f64, min_bin_n: usize) -> Result<Vec<BinSummary>> {
    let mut counts = [(0usize, 0usize); NUM_BINS];
    for &(bin, correct) in records {
        if bin >= NUM_BINS || correct > 1 {
            return Err(Error::Domain(format!("invalid record (bin {bin}, label {correct})")));
        }
        counts[bin].0 += 1;
        counts[bin].1 += usize::from(correct);
    }
    counts
        .iter()
        .enumerate()
        .map(|(bin_index, &(n, k))| {
            let (bin_lo, bin_hi) = bin_range(bin_index);
            let (accuracy_percent, wilson_low, wilson_high) = if n == 0 {
                (None, None, None)
            } else {
                let (lo, hi) = wilson_interval(k, n, z)?;
                (Some(100.0 * k as f64 / n as f64), Some(lo), Some(hi))
            };
            Ok(BinSummary {
                bin_index,
                bin_lo,
                bin_hi,
                n,
                k,
                accuracy_percent,
                wilson_low,
                wilson_high,
                low_support: n < min_bin_n,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    /// Accuracy points per unit similarity.
    pub slope: f64,
    pub intercept: f64,
    /// `None` when either coordinate has zero variance.
    pub pearson_r: Option<f64>,
    pub n_points: usize,
    pub weighted: bool,
}

/// `(bin midpoint, accuracy percent, n)` for every non-empty bin.
pub fn trend_points(bins: &[BinSummary]) -> Vec<(f64, f64, f64)> {
    bins.iter()
        .filter_map(|b| b.accuracy_percent.map(|acc| (bin_midpoint(b.bin_index), acc, b.n as f64)))
        .collect()
}

/// Unweighted least squares of y on x, with Pearson r.
pub fn fit_trend(points: &[(f64, f64)]) -> Result<TrendSummary> {
    let weighted: Vec<(f64, f64, f64)> = points.iter().map(|&(x, y)| (x, y, 1.0)).collect();
    let mut t = fit_weighted(&weighted)?;
    t.weighted = false;
    Ok(t)
}

/// Weighted least squares with weights in the third coordinate; r is the
/// weighted correlation.
pub fn fit_weighted(points: &[(f64, f64, f64)]) -> Result<TrendSummary> {
    let total: f64 = points.iter().map(|p| p.2).sum();
    if points.len() < 2 || total <= 0.0 {
        return Err(Error::InsufficientPoints(points.len()));
    }
    let x_mean = points.iter().map(|p| p.2 * p.0).sum::<f64>() / total;
    let y_mean = points.iter().map(|p| p.2 * p.1).sum::<f64>() / total;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y, w) in points {
        let (dx, dy) = (x - x_mean, y - y_mean);
        sxx += w * dx * dx;
        sxy += w * dx * dy;
        syy += w * dy * dy;
    }
    if sxx <= 0.0 {
        return Err(Error::InsufficientPoints(1));
    }
    let slope = sxy / sxx;
    let pearson_r = (syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0));
    Ok(TrendSummary {
        slope,
        intercept: y_mean - slope * x_mean,
        pearson_r,
        n_points: points.len(),
        weighted: true,
    })
}

/// Mean and spread of trends within one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendAggregate {
    pub n_trends: usize,
    pub slope_mean: f64,
    pub slope_std: f64,
    pub r_mean: Option<f64>,
    pub r_std: Option<f64>,
    /// Trends left out of the r statistics because r was undefined.
    pub r_excluded: usize,
    pub std_kind: String,
}

pub fn aggregate_trends(group: &str, trends: &[&TrendSummary]) -> Result<TrendAggregate> {
    if trends.is_empty() {
        return Err(Error::EmptyGroup(group.to_string()));
    }
    let slopes: Vec<f64> = trends.iter().map(|t| t.slope).collect();
    let rs: Vec<f64> = trends.iter().filter_map(|t| t.pearson_r).collect();
    let (slope_mean, slope_std) = mean_std(&slopes);
    let (r_mean, r_std) = if rs.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&rs);
        (Some(m), Some(s))
    };
    Ok(TrendAggregate {
        n_trends: trends.len(),
        slope_mean,
        slope_std,
        r_mean,
        r_std,
        r_excluded: trends.len() - rs.len(),
        std_kind: "population".into(),
    })
}

/// Mean and population standard deviation of a nonempty slice.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
