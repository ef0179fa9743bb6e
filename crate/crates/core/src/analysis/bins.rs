use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::stats::wilson_interval;

/// Bins with fewer samples than this are flagged.
pub const MIN_BIN_COUNT: usize = 5;
pub const DEFAULT_BINS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    /// Mean feature value inside the bin.
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
    pub proportion_same: f64,
    pub count: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    pub low_count: bool,
}

/// Equal-count (quantile) bins of `values` with the proportion of "same"
/// responses in each and a 95 % Wilson interval.
pub fn bin_proportions(values: &[f64], same: &[bool], n_bins: usize) -> Result<Vec<Bin>> {
    if values.len() != same.len() {
        return Err(Error::geometry("values and responses differ in length"));
    }
    let n = values.len();
    if n == 0 {
        return Err(Error::EmptyInput("no values to bin".into()));
    }
    if n_bins == 0 || n_bins > n / 2 {
        return Err(Error::Config(format!("{n_bins} bins is invalid for {n} samples (max n/2)")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("bin values must be finite".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let (base, extra) = (n / n_bins, n % n_bins);
    let mut out = Vec::with_capacity(n_bins);
    let mut start = 0;
    for b in 0..n_bins {
        let len = base + usize::from(b < extra);
        let members = &idx[start..start + len];
        start += len;
        let successes = members.iter().filter(|&&i| same[i]).count();
        let (ci_low, ci_high) = wilson_interval(successes, len);
        out.push(Bin {
            center: members.iter().map(|&i| values[i]).sum::<f64>() / len as f64,
            lo: values[members[0]],
            hi: values[members[len - 1]],
            proportion_same: successes as f64 / len as f64,
            count: len,
            ci_low,
            ci_high,
            low_count: len < MIN_BIN_COUNT,
        });
    }
    Ok(out)
}
