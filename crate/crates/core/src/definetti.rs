//! De Finetti quantities: the randomized local left-hand side, the fully
//! measured (gF) left-hand side, classical conditional multipartite mutual
//! information, and the Haar-mixture worked example with a quadrature oracle.
//!
//! All logarithms are natural.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::linalg::{contract_sites, tensor_all, trace_norm, DensityMatrix, SubsystemDims};
use crate::measurements::{operator_from_state_coords, MeasurementFamily, Povm};
use crate::rng::run_trials;
use crate::states::{Conditioner, MultipartiteState};
use crate::stats::mean_and_stderr;

pub const LOG_BASE: &str = "natural";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DefinettiEstimate {
    pub lhs_mean: f64,
    pub std_error: f64,
    pub rhs_bound: f64,
    pub trials: usize,
    pub n_sites: usize,
    pub k: usize,
    pub d: usize,
    pub family_id: String,
    pub log_base: &'static str,
}

impl DefinettiEstimate {
    /// `lhs_mean + 3·std_error ≤ rhs_bound`.
    pub fn holds(&self) -> bool {
        self.lhs_mean + 3.0 * self.std_error <= self.rhs_bound
    }
}

/// `√(4k²·ln d / N)`.
pub fn theorem2_rhs(k: usize, d: usize, n: usize) -> f64 {
    (4.0 * (k * k) as f64 * (d as f64).ln() / n as f64).sqrt()
}

/// `2√(2k³d²·ln d / N)`.
pub fn gf_rhs(k: usize, d: usize, n: usize) -> f64 {
    2.0 * (2.0 * (k * k * k) as f64 * (d * d) as f64 * (d as f64).ln() / n as f64).sqrt()
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || 2 * k >= n {
        return Err(Error::InvalidParameter(format!(
            "the randomized de Finetti bound requires 1 <= k < N/2, got k={k}, N={n}"
        )));
    }
    Ok(())
}

/// Iterates over all outcome tuples of a mixed-radix counter.
fn for_each_tuple(radices: &[usize], mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    let mut x = vec![0usize; radices.len()];
    loop {
        f(&x)?;
        let mut i = radices.len();
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            x[i] += 1;
            if x[i] < radices[i] {
                break;
            }
            x[i] = 0;
        }
    }
}

/// `Σ_x ‖B_x − P_x‖₁` where `B_x` is the conditional state of site 0 jointly with the
/// outcomes `x` of `povms` on sites `1..=povms.len()`, and `P_x` the same for the
/// product of the conditional marginals of those sites. When the unmeasured sites
/// are exchangeable the marginals coincide, so `P_x` is the power of any one of them.
pub fn measured_product_gap(cond: &Conditioner<'_>, povms: &[Arc<Povm>]) -> Result<f64> {
    let d = cond.state().site_dim();
    let k = povms.len();
    let first = cond.reduced(0)?;
    let q: Vec<Vec<f64>> = povms
        .iter()
        .enumerate()
        .map(|(i, p)| crate::measurements::apply_channel(p, &cond.reduced(i + 1)?))
        .collect::<Result<_>>()?;
    let radices: Vec<usize> = povms.iter().map(|p| p.len()).collect();
    let mut total = 0.0;
    if let Some((weights, coords)) = cond.mixture_parts() {
        let dd = d * d;
        let nb = weights.len();
        let block = |s: usize| &coords[s * nb * dd..(s + 1) * nb * dd];
        let tuples: usize = radices.iter().product();
        // acc[t] accumulates Σ_b w_b Π_i tr(M^{(i)}_{x_i} σ_{b,i+1}) σ_{b,0} for tuple index t.
        let mut acc = vec![0.0; tuples * dd];
        let mut lik: Vec<Vec<f64>> = radices.iter().map(|&r| vec![0.0; r]).collect();
        let mut coef = vec![0.0; tuples];
        for (b, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            for (i, p) in povms.iter().enumerate() {
                let f = &block(i + 1)[b * dd..(b + 1) * dd];
                lik[i].iter_mut().enumerate().for_each(|(x, l)| *l = dot(p.effect_coords(x), f));
            }
            // Mixed-radix expansion with the first POVM most significant.
            coef[0] = w;
            let mut len = 1;
            for l in &lik {
                for t in (0..len).rev() {
                    let c = coef[t];
                    for (x, &lx) in l.iter().enumerate() {
                        coef[t * l.len() + x] = c * lx;
                    }
                }
                len *= l.len();
            }
            let s0 = &block(0)[b * dd..(b + 1) * dd];
            for (a, &c) in acc.chunks_exact_mut(dd).zip(&coef) {
                if c != 0.0 {
                    a.iter_mut().zip(s0).for_each(|(a, s)| *a += c * s);
                }
            }
        }
        let mut t = 0;
        for_each_tuple(&radices, |x| {
            let blk = operator_from_state_coords(d, &acc[t * dd..(t + 1) * dd]);
            let prod: f64 = (0..k).map(|i| q[i][x[i]]).product();
            total += trace_norm(&(&blk - &first.op().scale(prod)));
            t += 1;
            Ok(())
        })?;
    } else {
        let sites: Vec<usize> = (0..=k).collect();
        let joint = cond.joint(&sites)?;
        let dims = SubsystemDims::uniform(d, k + 1);
        let measured: Vec<usize> = (1..=k).collect();
        for_each_tuple(&radices, |x| {
            let effect = tensor_all((0..k).map(|i| povms[i].element(x[i])));
            let block = contract_sites(joint.op(), &dims, &measured, &effect)?;
            let prod: f64 = (0..k).map(|i| q[i][x[i]]).product();
            total += trace_norm(&(&block - &first.op().scale(prod)));
            Ok(())
        })?;
    }
    Ok(total)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One draw of the randomized local de Finetti integrand.
///
/// Sites are 0-indexed: `l ~ unif{k+1, …, k+N/2}` and sites `l, …, k+N/2−1` are measured
/// to produce `w`; site 0 stays unmeasured, sites `1..=k` get fresh channels from the
/// family, and the comparison is with the product of the conditional marginals of
/// sites `0..=k`. With `shuffle` the state is first permuted uniformly at random and
/// the permutation is known to the estimator, as in the general (non-symmetric) form
/// of the bound.
pub fn randomized_definetti_trial<R: Rng + ?Sized>(
    state: &MultipartiteState,
    family: &MeasurementFamily,
    k: usize,
    shuffle: bool,
    rng: &mut R,
) -> Result<f64> {
    let n = state.n_sites();
    check_k(k, n)?;
    let owned;
    let st = if shuffle {
        owned = state.permute_random(rng).0;
        &owned
    } else {
        state
    };
    let half = n / 2;
    let l = rng.random_range(k + 1..=k + half);
    let mut cond = Conditioner::new(st);
    for site in l..k + half {
        let p = family.sample(rng);
        cond.measure(site, &p, rng)?;
    }
    let povms: Vec<Arc<Povm>> = (0..k).map(|_| family.sample(rng)).collect();
    measured_product_gap(&cond, &povms)
}

pub fn randomized_definetti_lhs(
    state: &MultipartiteState,
    family: &MeasurementFamily,
    k: usize,
    trials: usize,
    seed: u64,
    shuffle: bool,
) -> Result<DefinettiEstimate> {
    let n = state.n_sites();
    check_k(k, n)?;
    if family.dim() != state.site_dim() {
        return Err(Error::DimensionMismatch { expected: state.site_dim(), got: family.dim() });
    }
    if trials == 0 {
        return Err(Error::Empty);
    }
    let values: Vec<f64> = run_trials(seed, "definetti-thm2", trials, |_, rng| {
        randomized_definetti_trial(state, family, k, shuffle, rng)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let (lhs_mean, std_error) = mean_and_stderr(&values);
    Ok(DefinettiEstimate {
        lhs_mean,
        std_error,
        rhs_bound: theorem2_rhs(k, state.site_dim(), n),
        trials,
        n_sites: n,
        k,
        d: state.site_dim(),
        family_id: family.id().to_string(),
        log_base: LOG_BASE,
    })
}

/// Full trace-norm gap and its image under `m_dist` on sites `1..k` for one (l, w) draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GfSample {
    pub full: f64,
    pub measured: f64,
}

/// Sites `k, …, l−1` are measured with `m_dist`; the gap compares the joint state of
/// sites `0..k` with `k` copies of the conditional marginal of site 0.
pub fn gf_trial<R: Rng + ?Sized>(state: &MultipartiteState, m_dist: &Povm, k: usize, rng: &mut R) -> Result<GfSample> {
    let n = state.n_sites();
    check_k(k, n)?;
    let d = state.site_dim();
    let l = rng.random_range(k + 1..=k + n / 2);
    let mut cond = Conditioner::new(state);
    for site in k..l {
        cond.measure(site, m_dist, rng)?;
    }
    let sites: Vec<usize> = (0..k).collect();
    let joint = cond.joint(&sites)?;
    let first = cond.reduced(0)?;
    let product = tensor_all(std::iter::repeat_n(first.op(), k));
    let diff = joint.op() - &product;
    let full = trace_norm(&diff);
    let mut measured = 0.0;
    if k == 1 {
        measured = full;
    } else {
        let dims = SubsystemDims::uniform(d, k);
        let rest: Vec<usize> = (1..k).collect();
        for_each_tuple(&vec![m_dist.len(); k - 1], |x| {
            let e = tensor_all(x.iter().map(|&xi| m_dist.element(xi)));
            measured += trace_norm(&contract_sites(&diff, &dims, &rest, &e)?);
            Ok(())
        })?;
    }
    Ok(GfSample { full, measured })
}

pub fn gf_lhs(state: &MultipartiteState, m_dist: &Povm, k: usize, trials: usize, seed: u64) -> Result<DefinettiEstimate> {
    let n = state.n_sites();
    check_k(k, n)?;
    if !crate::measurements::is_informationally_complete(m_dist) {
        return Err(Error::NotInformationallyComplete("m_dist must span the operator space".into()));
    }
    if state.site_dim().checked_pow(k as u32).is_none_or(|dim| dim > crate::states::MAX_DENSE_DIM) {
        return Err(Error::Capacity(format!("d^k = {}^{k} exceeds the dense limit", state.site_dim())));
    }
    let values: Vec<f64> = run_trials(seed, "definetti-gf", trials, |_, rng| gf_trial(state, m_dist, k, rng).map(|s| s.full))
        .into_iter()
        .collect::<Result<_>>()?;
    let (lhs_mean, std_error) = mean_and_stderr(&values);
    Ok(DefinettiEstimate {
        lhs_mean,
        std_error,
        rhs_bound: gf_rhs(k, state.site_dim(), n),
        trials,
        n_sites: n,
        k,
        d: state.site_dim(),
        family_id: "m_dist".into(),
        log_base: LOG_BASE,
    })
}

/// Probability table over `(C, X₁, …, X_k)`, stored row-major with `C` outermost.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    shape: Vec<usize>,
    conditions: usize,
    probs: Vec<f64>,
}

impl JointTable {
    pub fn new(shape: Vec<usize>, conditions: usize, probs: Vec<f64>) -> Result<Self> {
        let cells = shape.iter().product::<usize>() * conditions;
        if shape.is_empty() || cells == 0 {
            return Err(Error::InvalidParameter("table needs at least one variable and one condition".into()));
        }
        if probs.len() != cells {
            return Err(Error::DimensionMismatch { expected: cells, got: probs.len() });
        }
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidParameter("table entries must be nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!("table sums to {total}")));
        }
        Ok(Self { shape, conditions, probs })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn conditions(&self) -> usize {
        self.conditions
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Table over merged variables: output variable `g` is the tuple of input variables
    /// `groups[g]`. Variables not named in any group are marginalized out.
    pub fn group(&self, groups: &[Vec<usize>]) -> Result<Self> {
        let k = self.shape.len();
        let mut seen = vec![false; k];
        for &v in groups.iter().flatten() {
            if v >= k || seen[v] {
                return Err(Error::InvalidParameter(format!("bad variable grouping {groups:?}")));
            }
            seen[v] = true;
        }
        let new_shape: Vec<usize> = groups.iter().map(|g| g.iter().map(|&v| self.shape[v]).product()).collect();
        let block: usize = self.shape.iter().product();
        let new_block: usize = new_shape.iter().product();
        let mut out = vec![0.0; new_block * self.conditions];
        let mut digits = vec![0usize; k];
        for (idx, &p) in self.probs.iter().enumerate() {
            let (c, mut rem) = (idx / block, idx % block);
            for v in (0..k).rev() {
                digits[v] = rem % self.shape[v];
                rem /= self.shape[v];
            }
            let new_idx = groups
                .iter()
                .fold(0, |acc, g| acc * g.iter().map(|&v| self.shape[v]).product::<usize>() + g.iter().fold(0, |a, &v| a * self.shape[v] + digits[v]));
            out[c * new_block + new_idx] += p;
        }
        Ok(Self { shape: new_shape, conditions: self.conditions, probs: out })
    }
}

fn entropy(p: impl Iterator<Item = f64>) -> f64 {
    p.filter(|&x| x > 0.0).map(|x| -x * x.ln()).sum()
}

/// `Σ_c p(c)·[Σ_i H(X_i|c) − H(X₁⋯X_k|c)]` in nats.
pub fn conditional_mutual_information(t: &JointTable) -> f64 {
    let block: usize = t.shape.iter().product();
    let k = t.shape.len();
    let mut total = 0.0;
    for c in 0..t.conditions {
        let slice = &t.probs[c * block..(c + 1) * block];
        let pc: f64 = slice.iter().sum();
        if pc <= 0.0 {
            continue;
        }
        let joint_h = entropy(slice.iter().map(|&p| p / pc));
        let mut marg: Vec<Vec<f64>> = t.shape.iter().map(|&s| vec![0.0; s]).collect();
        for (idx, &p) in slice.iter().enumerate() {
            let mut rem = idx;
            for v in (0..k).rev() {
                marg[v][rem % t.shape[v]] += p / pc;
                rem /= t.shape[v];
            }
        }
        let sum_h: f64 = marg.iter().map(|m| entropy(m.iter().copied())).sum();
        total += pc * (sum_h - joint_h);
    }
    total.max(0.0)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton iteration on `P_n`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    // (P_n(x), P_n'(x)) by the three-term recurrence.
    let legendre = |x: f64| {
        let (mut p0, mut p1) = (1.0, x);
        for j in 2..=n {
            let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
            p0 = p1;
            p1 = p2;
        }
        (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
    };
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AppendixBRecord {
    pub l: usize,
    pub w_weight: usize,
    pub k: usize,
    pub p_star: f64,
    pub analytic_reduced: [f64; 2],
    pub analytic_bound: f64,
    pub numeric_reduced: Option<[f64; 2]>,
    pub lhs_numeric: Option<f64>,
    pub quad_points: Option<usize>,
}

impl AppendixBRecord {
    pub fn analytic_state(&self) -> DensityMatrix {
        DensityMatrix::from_diagonal(&self.analytic_reduced).expect("valid diagonal")
    }
}

/// Closed-form reduced state `diag(1−p⋆, p⋆)`, `p⋆ = (|w|+1)/(l+2)`, and bound `√(9k·ln(l+1)/l)`.
pub fn appendix_b_analytic(l: usize, w_weight: usize, k: usize) -> Result<AppendixBRecord> {
    if l == 0 || w_weight > l || k == 0 {
        return Err(Error::InvalidParameter(format!("need l >= 1, 0 <= |w| <= l, k >= 1; got l={l}, |w|={w_weight}, k={k}")));
    }
    let p_star = (w_weight + 1) as f64 / (l + 2) as f64;
    Ok(AppendixBRecord {
        l,
        w_weight,
        k,
        p_star,
        analytic_reduced: [1.0 - p_star, p_star],
        analytic_bound: (9.0 * k as f64 * ((l + 1) as f64).ln() / l as f64).sqrt(),
        numeric_reduced: None,
        lhs_numeric: None,
        quad_points: None,
    })
}

/// Quadrature over `p ∈ [0,1]` against the posterior density
/// `(l+1)·C(l,|w|)·(1−p)^{l−|w|}·p^{|w|}` of the measured diagonal.
pub fn appendix_b_numeric(l: usize, w_weight: usize, k: usize, quad_points: usize) -> Result<AppendixBRecord> {
    let mut rec = appendix_b_analytic(l, w_weight, k)?;
    if quad_points < 64 {
        return Err(Error::InvalidParameter(format!("quad_points must be at least 64, got {quad_points}")));
    }
    let (nodes, weights) = gauss_legendre(quad_points);
    let ln_norm = ((l + 1) as f64).ln() + ln_binomial(l as u64, w_weight as u64);
    let (wl, wr) = (w_weight as f64, (l - w_weight) as f64);
    // m[j] = E[p^j (1−p)^{k−j}] under the posterior.
    let mut moments = vec![0.0; k + 1];
    let mut mean = 0.0;
    for (t, wt) in nodes.iter().zip(&weights) {
        let p = 0.5 * (t + 1.0);
        let dens = (ln_norm + wl * p.ln() + wr * (1.0 - p).ln()).exp();
        let w = 0.5 * wt * dens;
        mean += w * p;
        for (j, m) in moments.iter_mut().enumerate() {
            *m += w * p.powi(j as i32) * (1.0 - p).powi((k - j) as i32);
        }
    }
    let ps = rec.p_star;
    let lhs: f64 = (0..=k)
        .map(|j| {
            let count = (ln_binomial(k as u64, j as u64)).exp().round();
            count * (moments[j] - ps.powi(j as i32) * (1.0 - ps).powi((k - j) as i32)).abs()
        })
        .sum();
    rec.numeric_reduced = Some([1.0 - mean, mean]);
    rec.lhs_numeric = Some(lhs);
    rec.quad_points = Some(quad_points);
    Ok(rec)
}

/// Checks that `reduced` is within `tol` of the analytic state in max-abs entry.
pub fn appendix_b_agrees(rec: &AppendixBRecord, tol: f64) -> bool {
    rec.numeric_reduced
        .is_some_and(|r| (r[0] - rec.analytic_reduced[0]).abs() <= tol && (r[1] - rec.analytic_reduced[1]).abs() <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::pauli6_povm;
    use crate::rng::trial_rng;
    use crate::states::{basis_mixture, iid_state, random_mixed_state};
    use rand::Rng;
    use statrs::function::gamma::ln_gamma;

    #[test]
    fn iid_input_vanishes() {
        let mut rng = trial_rng(0, "df", 0);
        let sigma = random_mixed_state(2, &mut rng);
        let st = iid_state(&sigma, 8);
        for fam in [MeasurementFamily::computational(2), MeasurementFamily::pauli3(), MeasurementFamily::clifford1()] {
            for k in [1, 2] {
                let est = randomized_definetti_lhs(&st, &fam, k, 200, 1, false).unwrap();
                assert!(est.lhs_mean <= 1e-10, "{est:?}");
            }
        }
        let dense = st.densified().unwrap();
        let est = randomized_definetti_lhs(&dense, &MeasurementFamily::pauli3(), 2, 50, 1, false).unwrap();
        assert!(est.lhs_mean <= 1e-10);
    }

    #[test]
    fn mixture_and_dense_paths_agree_per_trial() {
        let mut rng = trial_rng(0, "df", 1);
        let st = crate::states::haar_mixture(8, 2, 6, &mut rng).unwrap();
        let dense = st.densified().unwrap();
        let z = Povm::computational(2);
        let povms: Vec<Arc<Povm>> = vec![Arc::new(pauli6_povm()), Arc::new(z.clone())];
        let mut ca = Conditioner::new(&st);
        let mut cb = Conditioner::new(&dense);
        for (site, x) in [(4usize, 0usize), (5, 1), (6, 1)] {
            ca.condition(site, z.element(x)).unwrap();
            cb.condition(site, z.element(x)).unwrap();
        }
        let ga = measured_product_gap(&ca, &povms).unwrap();
        let gb = measured_product_gap(&cb, &povms).unwrap();
        assert!((ga - gb).abs() < 1e-10, "{ga} vs {gb}");
    }

    #[test]
    fn basis_mixture_computational_gap_is_small() {
        // Branch posterior oracle: after m measured zeros/ones the wrong branch has weight 0,
        // so the gap is exactly zero whenever at least one site was measured.
        let st = basis_mixture(2, 16).unwrap();
        let fam = MeasurementFamily::computational(2);
        let est = randomized_definetti_lhs(&st, &fam, 1, 2000, 3, false).unwrap();
        // Only l = k + N/2 leaves w empty: probability 1/8, gap 1 in that case.
        assert!((est.lhs_mean - 1.0 / 8.0).abs() < 4.0 * est.std_error + 1e-9, "{est:?}");
    }

    #[test]
    fn clifford_family_respects_bound_on_small_mixture() {
        let st = basis_mixture(2, 8).unwrap();
        let est = randomized_definetti_lhs(&st, &MeasurementFamily::clifford1(), 1, 10_000, 4, false).unwrap();
        assert!(est.holds(), "{est:?}");
        assert!((est.rhs_bound - (4.0 * 2f64.ln() / 8.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn k_range_is_enforced() {
        let st = basis_mixture(2, 8).unwrap();
        assert!(randomized_definetti_lhs(&st, &MeasurementFamily::pauli3(), 4, 10, 0, false).is_err());
        assert!(randomized_definetti_lhs(&st, &MeasurementFamily::pauli3(), 0, 10, 0, false).is_err());
    }

    #[test]
    fn gf_examples() {
        let mut rng = trial_rng(0, "gf", 0);
        let sigma = random_mixed_state(2, &mut rng);
        let est = gf_lhs(&iid_state(&sigma, 10), &pauli6_povm(), 2, 50, 0).unwrap();
        assert!(est.lhs_mean < 1e-10);
        let bm = basis_mixture(2, 64).unwrap();
        let est = gf_lhs(&bm, &pauli6_povm(), 2, 2000, 1).unwrap();
        assert!(est.lhs_mean <= est.rhs_bound, "{est:?}");
        for t in 0..200 {
            let s = gf_trial(&bm, &pauli6_povm(), 3, &mut trial_rng(2, "gf-witness", t)).unwrap();
            assert!(s.full + 1e-12 >= s.measured);
        }
        assert!(matches!(gf_lhs(&bm, &Povm::computational(2), 2, 10, 0), Err(Error::NotInformationallyComplete(_))));
    }

    fn table(shape: Vec<usize>, conditions: usize, raw: Vec<f64>) -> JointTable {
        let s: f64 = raw.iter().sum();
        JointTable::new(shape, conditions, raw.into_iter().map(|x| x / s).collect()).unwrap()
    }

    #[test]
    fn mutual_information_examples() {
        let indep = table(vec![2, 2], 2, vec![1.0; 8]);
        assert!(conditional_mutual_information(&indep).abs() < 1e-15);
        let corr = table(vec![2, 2], 1, vec![1.0, 0.0, 0.0, 1.0]);
        assert!((conditional_mutual_information(&corr) - 2f64.ln()).abs() < 1e-15);
        assert!(JointTable::new(vec![2], 1, vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn mutual_information_chain_rule_and_processing() {
        let mut rng = trial_rng(0, "mi", 0);
        for _ in 0..50 {
            let raw: Vec<f64> = (0..2 * 2 * 3 * 2).map(|_| rng.random::<f64>()).collect();
            let t = table(vec![2, 3, 2], 2, raw);
            let lhs = conditional_mutual_information(&t);
            let i12 = conditional_mutual_information(&t.group(&[vec![0], vec![1]]).unwrap());
            let i12_3 = conditional_mutual_information(&t.group(&[vec![0, 1], vec![2]]).unwrap());
            assert!((lhs - (i12 + i12_3)).abs() < 1e-10);
            assert!(lhs >= 0.0 && i12 <= lhs + 1e-12);
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
        let (_, w) = gauss_legendre(512);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn appendix_b_analytic_examples() {
        let r = appendix_b_analytic(4, 2, 2).unwrap();
        assert!((r.p_star - 0.5).abs() < 1e-15);
        let r = appendix_b_analytic(1, 0, 1).unwrap();
        assert!((r.p_star - 1.0 / 3.0).abs() < 1e-15 && (r.analytic_reduced[0] - 2.0 / 3.0).abs() < 1e-15);
        let r = appendix_b_analytic(1000, 10, 2).unwrap();
        assert!((r.analytic_bound - (18.0 * 1001f64.ln() / 1000.0).sqrt()).abs() < 1e-15);
        assert!((r.analytic_bound - 0.3527).abs() < 1e-4);
    }

    /// `E[p^a (1−p)^b]` under Beta(|w|+1, l−|w|+1) via log-gamma.
    fn beta_moment(l: usize, w: usize, a: usize, b: usize) -> f64 {
        let (al, be) = ((w + 1) as f64, (l - w + 1) as f64);
        let lb = |x: f64, y: f64| ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y);
        (lb(al + a as f64, be + b as f64) - lb(al, be)).exp()
    }

    #[test]
    fn appendix_b_numeric_matches_beta_oracle() {
        for l in [1usize, 7, 50] {
            for w in 0..=l {
                let r = appendix_b_numeric(l, w, 3, 64).unwrap();
                assert!(appendix_b_agrees(&r, 1e-10));
                let ps = r.p_star;
                let oracle: f64 = (0..=3)
                    .map(|j| {
                        let c = [1.0, 3.0, 3.0, 1.0][j];
                        c * (beta_moment(l, w, j, 3 - j) - ps.powi(j as i32) * (1.0 - ps).powi(3 - j as i32)).abs()
                    })
                    .sum();
                assert!((r.lhs_numeric.unwrap() - oracle).abs() < 1e-10);
            }
        }
        assert!(appendix_b_numeric(4, 2, 1, 64).unwrap().lhs_numeric.unwrap().abs() < 1e-12);
    }

    #[test]
    fn appendix_b_quadrature_converges() {
        for (l, w) in [(256usize, 100usize), (64, 3)] {
            let a = appendix_b_numeric(l, w, 3, 256).unwrap().lhs_numeric.unwrap();
            let b = appendix_b_numeric(l, w, 3, 512).unwrap().lhs_numeric.unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }
}
