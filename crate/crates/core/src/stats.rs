//! Order statistics on Monte Carlo samples.

use crate::error::{Error, Result};

/// 1-based rank `ceil(p·n)` clamped to `[1, n]`.
///
/// A relative guard of a few ulps keeps products such as `0.95 × 100`
/// (which evaluates to `95.00000000000001`) on the intended integer.
pub fn ceil_rank(p: f64, n: usize) -> usize {
    let raw = p * n as f64;
    let rank = (raw - 4.0 * f64::EPSILON * raw.abs()).ceil();
    (rank as usize).clamp(1, n)
}

fn check(samples: &[f64], p: f64) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::domain("empirical quantile of an empty sample"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability {p} outside (0, 1)")));
    }
    Ok(())
}

/// The `ceil(p·B)`-th order statistic (1-based) of the sample.
pub fn empirical_quantile(samples: &[f64], p: f64) -> Result<f64> {
    check(samples, p)?;
    let mut v = samples.to_vec();
    Ok(empirical_quantile_in_place(&mut v, p))
}

/// Same as [`empirical_quantile`] but reorders `samples` instead of copying.
/// Panics on an empty slice.
pub fn empirical_quantile_in_place(samples: &mut [f64], p: f64) -> f64 {
    let k = ceil_rank(p, samples.len()) - 1;
    let (_, kth, _) = samples.select_nth_unstable_by(k, f64::total_cmp);
    *kth
}

/// Lower median: the `ceil(n/2)`-th order statistic.
pub fn lower_median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("median of an empty list"));
    }
    let mut v = values.to_vec();
    let k = (v.len() + 1) / 2 - 1;
    let (_, kth, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*kth)
}

/// Two-sample Kolmogorov–Smirnov distance `sup |F_a - F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("KS distance needs two nonempty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean and its standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Binomial standard error `sqrt(p(1-p)/n)`.
pub fn binomial_se(rate: f64, n: usize) -> f64 {
    (rate * (1.0 - rate) / n as f64).sqrt()
}

/// Two-sided sign test of symmetry about 0 (normal approximation); zeros
/// are dropped.
pub fn sign_test_p_value(values: &[f64]) -> f64 {
    let pos = values.iter().filter(|v| **v > 0.0).count() as f64;
    let n = values.iter().filter(|v| **v != 0.0).count() as f64;
    if n == 0.0 {
        return 1.0;
    }
    let z = (pos - 0.5 * n) / (0.25 * n).sqrt();
    2.0 * crate::dist::normal_cdf(-z.abs())
}
