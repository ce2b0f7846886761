//! Small statistics helpers: sample moments, Wilson intervals, χ² tests.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub const Z95: f64 = 1.959963984540054;

/// Sample mean and standard error of the mean (unbiased variance).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Wilson score interval at 95% confidence for `successes / trials`.
/// Returns (lower, upper).
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Half-width of the Wilson interval, the uncertainty attached to error estimates.
pub fn wilson_halfwidth(successes: usize, trials: usize) -> f64 {
    let (lo, hi) = wilson_interval(successes, trials);
    0.5 * (hi - lo)
}

/// Binomial standard deviation of an empirical rate at the true rate `p`.
pub fn binomial_sigma(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn upper_tail(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    1.0 - dist.cdf(statistic)
}

/// Pearson goodness-of-fit of `counts` against `expected_probs`.
pub fn chi_square_gof(counts: &[usize], expected_probs: &[f64]) -> Result<ChiSquareResult> {
    if counts.len() != expected_probs.len() || counts.is_empty() {
        return Err(Error::DimensionMismatch { expected: expected_probs.len(), got: counts.len() });
    }
    let n: usize = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0;
    for (&o, &p) in counts.iter().zip(expected_probs) {
        let e = p * n as f64;
        if e > 0.0 {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        } else if o > 0 {
            return Ok(ChiSquareResult { statistic: f64::INFINITY, dof: cells, p_value: 0.0 });
        }
    }
    let dof = cells.saturating_sub(1);
    Ok(ChiSquareResult { statistic: stat, dof, p_value: upper_tail(stat, dof) })
}

/// Two-sample χ² homogeneity test on aligned category counts. Categories empty in
/// both samples are skipped; categories with small pooled counts are merged into one.
pub fn chi_square_two_sample(a: &[usize], b: &[usize]) -> Result<ChiSquareResult> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let (na, nb) = (a.iter().sum::<usize>() as f64, b.iter().sum::<usize>() as f64);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Empty);
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled_small = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        if x + y == 0.0 {
            continue;
        }
        if (x + y) * na.min(nb) / (na + nb) < 5.0 {
            pooled_small.0 += x;
            pooled_small.1 += y;
        } else {
            cells.push((x, y));
        }
    }
    if pooled_small.0 + pooled_small.1 > 0.0 {
        cells.push(pooled_small);
    }
    let total = na + nb;
    let mut stat = 0.0;
    for &(x, y) in &cells {
        let col = x + y;
        let (ea, eb) = (col * na / total, col * nb / total);
        stat += (x - ea).powi(2) / ea + (y - eb).powi(2) / eb;
    }
    let dof = cells.len().saturating_sub(1);
    Ok(ChiSquareResult { statistic: stat, dof, p_value: upper_tail(stat, dof) })
}

/// Lower-middle median of a non-empty slice.
pub fn lower_median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty);
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v[(v.len() - 1) / 2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let (m, se) = mean_and_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn wilson_known_value() {
        // 10/100: classical reference interval (0.0552, 0.1744)
        let (lo, hi) = wilson_interval(10, 100);
        assert!((lo - 0.05523).abs() < 1e-4 && (hi - 0.17437).abs() < 1e-4);
        let (lo0, hi0) = wilson_interval(0, 50);
        assert_eq!(lo0, 0.0);
        assert!(hi0 > 0.0 && hi0 < 0.1);
    }

    #[test]
    fn gof_detects_bias() {
        let fair = chi_square_gof(&[498, 502], &[0.5, 0.5]).unwrap();
        assert!(fair.p_value > 0.5);
        let biased = chi_square_gof(&[400, 600], &[0.5, 0.5]).unwrap();
        assert!(biased.p_value < 1e-6);
    }

    #[test]
    fn two_sample_identical_counts() {
        let r = chi_square_two_sample(&[100, 200, 300], &[100, 200, 300]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn median_lower_middle() {
        assert_eq!(lower_median(&[3.0, 1.0, 2.0, 4.0]).unwrap(), 2.0);
        assert!(lower_median(&[]).is_err());
    }
}
