//! Why the permutation must stay hidden: a classical two-string construction
//! on which no estimator of the test bit beats error 1/4 once the error is
//! averaged over permutations of a fixed string.
//!
//! Everything here is exact: permutations are enumerated with Heap's algorithm
//! and distributions are compared by integer cross-multiplication.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest N for which all N! permutations are enumerated.
pub const MAX_EXACT_N: usize = 10;

fn check_n(n: usize) -> Result<()> {
    if n < 4 || n % 2 != 0 || n > MAX_EXACT_N {
        return Err(Error::InvalidParameter(format!("N must be even with 4 <= N <= {MAX_EXACT_N}, got {n}")));
    }
    Ok(())
}

/// `0^{N/2} 1^{N/2}`.
pub fn balanced_string(n: usize) -> Vec<u8> {
    (0..n).map(|i| u8::from(i >= n / 2)).collect()
}

/// `0^{N/2+1} 1^{N/2−1}`.
pub fn shifted_string(n: usize) -> Vec<u8> {
    (0..n).map(|i| u8::from(i > n / 2)).collect()
}

/// Calls `f` on every permutation of `0..n` (Heap's algorithm, iterative).
pub fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&perm);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            f(&perm);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn pack(bits: impl Iterator<Item = u8>) -> u32 {
    bits.fold(0, |acc, b| (acc << 1) | u32::from(b))
}

/// Unnormalized law of the training string `(x_{π(1)}, …, x_{π(N−1)})` over
/// uniform π, restricted to permutations whose test bit `x_{π(N)}` is `test_bit`
/// (or unrestricted when `None`). Returns counts per packed string and the total.
pub fn training_distribution(x: &[u8], test_bit: Option<u8>) -> (BTreeMap<u32, u64>, u64) {
    let n = x.len();
    let mut counts = BTreeMap::new();
    let mut total = 0;
    for_each_permutation(n, |perm| {
        if test_bit.is_none_or(|b| x[perm[n - 1]] == b) {
            *counts.entry(pack(perm[..n - 1].iter().map(|&i| x[i]))).or_insert(0) += 1;
            total += 1;
        }
    });
    (counts, total)
}

/// Exact equality of two unnormalized laws as rational distributions.
pub fn same_distribution(a: &(BTreeMap<u32, u64>, u64), b: &(BTreeMap<u32, u64>, u64)) -> bool {
    let keys: std::collections::BTreeSet<u32> = a.0.keys().chain(b.0.keys()).copied().collect();
    keys.into_iter().all(|k| {
        let ca = u128::from(a.0.get(&k).copied().unwrap_or(0));
        let cb = u128::from(b.0.get(&k).copied().unwrap_or(0));
        ca * u128::from(b.1) == cb * u128::from(a.1)
    })
}

/// The balanced string conditioned on a one at the test position and the shifted
/// string conditioned on a zero there induce the same training-string law.
pub fn appendix_a_distribution_check(n: usize) -> Result<bool> {
    check_n(n)?;
    let a = training_distribution(&balanced_string(n), Some(1));
    let b = training_distribution(&shifted_string(n), Some(0));
    Ok(same_distribution(&a, &b))
}

/// Exact fraction `failures / N!`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `self ≥ p/q`, exactly.
    pub fn at_least(&self, p: u64, q: u64) -> bool {
        u128::from(self.num) * u128::from(q) >= u128::from(p) * u128::from(self.den)
    }
}

/// Permutation-averaged error of `estimator` on the point mass at `x`.
pub fn delta_prime_for_string(x: &[u8], epsilon: f64, estimator: impl Fn(&[u8]) -> f64) -> Fraction {
    let n = x.len();
    let mut train = vec![0u8; n - 1];
    let (mut fails, mut total) = (0u64, 0u64);
    for_each_permutation(n, |perm| {
        for (slot, &i) in train.iter_mut().zip(&perm[..n - 1]) {
            *slot = x[i];
        }
        if (f64::from(x[perm[n - 1]]) - estimator(&train)).abs() > epsilon {
            fails += 1;
        }
        total += 1;
    });
    Fraction { num: fails, den: total }
}

/// Fraction of ones in the training string.
pub fn mean_estimator(train: &[u8]) -> f64 {
    train.iter().map(|&b| f64::from(b)).sum::<f64>() / train.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AppendixAReport {
    pub n: usize,
    pub epsilon: f64,
    pub distributions_equal: bool,
    pub delta_prime_balanced: Fraction,
    pub delta_prime_shifted: Fraction,
    /// Worst case over the two point masses: a lower bound on the estimator's worst-case δ′.
    pub delta_prime_lower: f64,
    pub at_least_quarter: bool,
}

pub fn appendix_a_report(n: usize, epsilon: f64, estimator: impl Fn(&[u8]) -> f64 + Copy) -> Result<AppendixAReport> {
    check_n(n)?;
    let a = delta_prime_for_string(&balanced_string(n), epsilon, estimator);
    let b = delta_prime_for_string(&shifted_string(n), epsilon, estimator);
    let worst = if a.value() >= b.value() { a } else { b };
    Ok(AppendixAReport {
        n,
        epsilon,
        distributions_equal: appendix_a_distribution_check(n)?,
        delta_prime_balanced: a,
        delta_prime_shifted: b,
        delta_prime_lower: worst.value(),
        at_least_quarter: worst.at_least(1, 4),
    })
}
