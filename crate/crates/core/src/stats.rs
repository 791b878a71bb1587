//! Small statistics helpers for the ablation reports.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Trailing moving average: entry `i` is the mean of the last
/// `min(window, i + 1)` values.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Means of the first and last `ceil(fraction * n)` values.
pub fn window_means(values: &[f64], fraction: f64) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let w = ((values.len() as f64 * fraction).ceil() as usize).clamp(1, values.len());
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&values[..w]), mean(&values[values.len() - w..]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ConfidenceInterval {
    pub fn overlaps(&self, other: &ConfidenceInterval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Two-sided Student-t interval for the mean at level `level`.
pub fn mean_ci(values: &[f64], level: f64) -> Result<ConfidenceInterval> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Domain(format!("confidence interval needs at least 2 values, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Internal(e.to_string()))?
        .inverse_cdf(0.5 + level / 2.0);
    let half = t * (var / n as f64).sqrt();
    Ok(ConfidenceInterval {
        mean,
        lo: mean - half,
        hi: mean + half,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Number of non-zero differences.
    pub n: usize,
    /// Sum of ranks of the positive differences.
    pub w_plus: f64,
    /// Exact one-sided p-value for `x > y`.
    pub p_value: f64,
}

/// Exact one-sided Wilcoxon signed-rank test of `x > y` on paired samples.
///
/// Zero differences are dropped; tied magnitudes get average ranks. The null
/// distribution is enumerated exactly over doubled (hence integral) ranks.
pub fn wilcoxon_signed_rank_greater(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::dim("wilcoxon pairs", x.len(), y.len()));
    }
    let mut d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite difference".into()));
    }
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            n: 0,
            w_plus: 0.0,
            p_value: 1.0,
        });
    }
    d.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    // doubled ranks: a tie group occupying 1-based positions i..=j gets i + j
    let mut ranks2 = vec![0usize; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        for r in &mut ranks2[i..=j] {
            *r = (i + 1) + (j + 1);
        }
        i = j + 1;
    }
    let observed: usize = d.iter().zip(&ranks2).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total: usize = ranks2.iter().sum();
    // counts[s] = number of sign patterns whose positive doubled-rank sum is s
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    for &r in &ranks2 {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let tail: f64 = counts[observed..].iter().sum();
    let p_value = tail / 2f64.powi(n as i32);
    Ok(WilcoxonResult {
        n,
        w_plus: observed as f64 / 2.0,
        p_value,
    })
}
