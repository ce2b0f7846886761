//! Error-probability functionals, with and without calibration, and the bounds they are compared against.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::DensityMatrix;
use crate::rng::{run_trials, TrialRng};
use crate::states::{random_permutation, MultipartiteState, Representation};
use crate::stats::wilson_interval;

use super::predict::{evaluate_dfunction, evaluate_success, DFunction, Prediction, PredictionKey, SuccessPredicate};
use super::wrapper::{algorithm1_run, coverage_failure_exact, coverage_k, IidAlgorithmSpec, RunRecord, Wrapper};

/// Failure-frequency estimate with a Wilson 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorEstimate {
    pub delta_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Half-width of the Wilson interval.
    pub ci_halfwidth: f64,
    pub trials: usize,
    pub failures: usize,
}

impl ErrorEstimate {
    pub fn from_counts(failures: usize, trials: usize) -> Result<Self> {
        if trials == 0 {
            return Err(Error::Empty);
        }
        let (lo, hi) = wilson_interval(failures, trials);
        Ok(Self {
            delta_hat: failures as f64 / trials as f64,
            ci_low: lo,
            ci_high: hi,
            ci_halfwidth: 0.5 * (hi - lo),
            trials,
            failures,
        })
    }
}

/// One wrapper run with its verdict.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub record: RunRecord,
    pub success: bool,
}

/// Produces the input state for a trial; fixed inputs ignore the generator.
pub type StateSource<'a> = &'a (dyn Fn(&mut TrialRng) -> Result<Arc<MultipartiteState>> + Sync);

/// Runs `trials` independent wrapper executions on stream `stream` of `master`.
pub fn run_wrapper_trials(
    source: StateSource<'_>,
    wrapper: &dyn Wrapper,
    predicate: &SuccessPredicate,
    trials: usize,
    master: u64,
    stream: &str,
) -> Result<Vec<TrialOutcome>> {
    run_trials(master, stream, trials, |_, rng| {
        let state = source(rng)?;
        let record = wrapper.run(&state, rng)?;
        let success = evaluate_success(predicate, &record.p, &record.conditional_test_state)?;
        Ok(TrialOutcome { record, success })
    })
    .into_iter()
    .collect()
}

pub fn summarize(outcomes: &[TrialOutcome]) -> Result<ErrorEstimate> {
    ErrorEstimate::from_counts(outcomes.iter().filter(|o| !o.success).count(), outcomes.len())
}

/// `δ_B`: fraction of runs whose prediction fails against the calibrated test state.
pub fn error_probability_with_calibration(
    source: StateSource<'_>,
    wrapper: &dyn Wrapper,
    predicate: &SuccessPredicate,
    trials: usize,
    master: u64,
    stream: &str,
) -> Result<ErrorEstimate> {
    summarize(&run_wrapper_trials(source, wrapper, predicate, trials, master, stream)?)
}

/// `δ_A`: error of the raw algorithm on `σ^{⊗k_A}`.
pub fn iid_error_probability(
    alg: &IidAlgorithmSpec,
    sigma: &DensityMatrix,
    predicate: &SuccessPredicate,
    trials: usize,
    master: u64,
    stream: &str,
) -> Result<ErrorEstimate> {
    let fails = run_trials(master, stream, trials, |_, rng| {
        let p = alg.run_iid(sigma, rng)?;
        Ok(!evaluate_success(predicate, &p, sigma)?)
    })
    .into_iter()
    .collect::<Result<Vec<bool>>>()?;
    ErrorEstimate::from_counts(fails.iter().filter(|&&f| f).count(), trials)
}

/// `δ′`: each trial permutes the input by a fresh π; the learner never sees π,
/// while the test state is the last site of `ρ^π`.
pub fn delta_prime(
    state: &MultipartiteState,
    wrapper: &dyn Wrapper,
    predicate: &SuccessPredicate,
    trials: usize,
    master: u64,
    stream: &str,
) -> Result<ErrorEstimate> {
    let source = |rng: &mut TrialRng| -> Result<Arc<MultipartiteState>> {
        let perm = random_permutation(state.n_sites(), rng);
        Ok(Arc::new(state.permute_by(&perm)?))
    };
    error_probability_with_calibration(&source, wrapper, predicate, trials, master, stream)
}

/// Test state conditioned on the prediction alone.
#[derive(Clone, Debug)]
pub struct ConditionalOnP {
    pub prediction: Prediction,
    /// Probability (exact) or frequency (sampled) of the prediction.
    pub probability: f64,
    pub count: usize,
    pub state: DensityMatrix,
}

/// Law of `(p, ρ_p)` for Algorithm 3, keyed by prediction.
#[derive(Clone, Debug, Default)]
pub struct Algorithm3Table {
    strata: BTreeMap<PredictionKey, ConditionalOnP>,
    pub trials: usize,
    pub exact: bool,
}

impl Algorithm3Table {
    /// Stratified Monte Carlo: `ρ_p` is the average of `ρ_{l,r,w,v}` over runs that predicted `p`.
    pub fn sampled(records: &[RunRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty);
        }
        let mut sums: BTreeMap<PredictionKey, (Prediction, usize, crate::linalg::CMatrix)> = BTreeMap::new();
        for rec in records {
            let entry = sums.entry(rec.p.key()).or_insert_with(|| {
                let d = rec.conditional_test_state.dim();
                (rec.p.clone(), 0, crate::linalg::CMatrix::zeros(d, d))
            });
            entry.1 += 1;
            entry.2 += rec.conditional_test_state.matrix();
        }
        let n = records.len();
        let strata = sums
            .into_iter()
            .map(|(key, (prediction, count, sum))| {
                let state = DensityMatrix::from_matrix(sum.unscale(count as f64))?;
                Ok((key, ConditionalOnP { prediction, probability: count as f64 / n as f64, count, state }))
            })
            .collect::<Result<_>>()?;
        Ok(Self { strata, trials: n, exact: false })
    }

    pub fn get(&self, p: &Prediction) -> Option<&ConditionalOnP> {
        self.strata.get(&p.key())
    }

    pub fn strata(&self) -> impl Iterator<Item = &ConditionalOnP> {
        self.strata.values()
    }

    /// `δ` without calibration: total mass of predictions with `d(p, ρ_p) > ε`.
    pub fn error(&self, d: &DFunction, epsilon: f64) -> Result<f64> {
        self.strata().try_fold(0.0, |acc, s| {
            Ok(acc + if evaluate_dfunction(d, &s.prediction, &s.state)? > epsilon { s.probability } else { 0.0 })
        })
    }
}

/// Runs Algorithm 1 `trials` times and builds the stratified table.
pub fn algorithm3_sampled(
    state: &MultipartiteState,
    alg: &IidAlgorithmSpec,
    trials: usize,
    master: u64,
    stream: &str,
) -> Result<(Algorithm3Table, Vec<RunRecord>)> {
    let records = run_trials(master, stream, trials, |_, rng| algorithm1_run(state, alg, rng))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((Algorithm3Table::sampled(&records)?, records))
}

/// Largest outcome enumeration attempted by [`algorithm3_exact`].
pub const EXACT_ENUMERATION_LIMIT: usize = 1 << 20;

/// Exact `ρ_p ∝ Σ_b w_b Pr_b(p) σ_b` for mixtures of i.i.d. branches and a fixed algorithm.
///
/// Under branch `b` the prediction depends only on the `k_A` first-hit outcomes,
/// which are i.i.d. from `σ_b`, or is a coverage failure with a branch-independent
/// probability; the test site is independent of both.
pub fn algorithm3_exact(state: &MultipartiteState, alg: &IidAlgorithmSpec) -> Result<Algorithm3Table> {
    if !alg.is_fixed() {
        return Err(Error::InvalidParameter("exact conditioning on p needs a fixed device list".into()));
    }
    let Representation::ProductMixture(branches) = state.representation() else {
        return Err(Error::InvalidParameter("exact conditioning on p needs a product mixture".into()));
    };
    for b in branches {
        let f0 = &b.factors[0];
        if b.factors.iter().any(|f| f.op().max_abs_diff(f0.op()) > 1e-12) {
            return Err(Error::InvalidParameter("exact conditioning on p needs i.i.d. branches".into()));
        }
    }
    let mut rng = crate::rng::trial_rng(0, "algorithm3-exact-plan", 0);
    let plan = alg.plan(&mut rng)?;
    let sizes: Vec<usize> = plan.devices.iter().map(|m| m.len()).collect();
    let total = sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s)).filter(|&t| t <= EXACT_ENUMERATION_LIMIT);
    let Some(total) = total else {
        return Err(Error::Capacity(format!("outcome space of {} devices exceeds {EXACT_ENUMERATION_LIMIT}", sizes.len())));
    };
    let big_k = coverage_k(plan.devices.len(), alg.delta_a);
    let miss = coverage_failure_exact(plan.devices.len(), big_k);
    let n = state.n_sites();
    if n <= 2 * (big_k + 1) {
        return Err(Error::InsufficientSites { needed: 2 * (big_k + 1), have: n });
    }
    let d = state.site_dim();

    let mut mass: BTreeMap<PredictionKey, (Prediction, crate::linalg::CMatrix, f64)> = BTreeMap::new();
    let mut add = |p: Prediction, weight: f64, sigma: &DensityMatrix| {
        let e = mass.entry(p.key()).or_insert_with(|| (p, crate::linalg::CMatrix::zeros(d, d), 0.0));
        e.1 += sigma.matrix().scale(weight);
        e.2 += weight;
    };
    let mut outcomes = vec![0usize; sizes.len()];
    for b in branches {
        let sigma = &b.factors[0];
        let probs = plan.devices.iter().map(|m| m.probabilities(sigma)).collect::<Result<Vec<_>>>()?;
        if miss > 0.0 {
            add(Prediction::CoverageFailure, b.weight * miss, sigma);
        }
        for idx in 0..total {
            let mut rem = idx;
            let mut pr = b.weight * (1.0 - miss);
            // Last device varies fastest.
            for t in (0..sizes.len()).rev() {
                outcomes[t] = rem % sizes[t];
                rem /= sizes[t];
                pr *= probs[t][outcomes[t]].max(0.0);
            }
            if pr > 0.0 {
                add((plan.predictor)(&outcomes)?, pr, sigma);
            }
        }
    }
    let strata = mass
        .into_iter()
        .filter(|(_, (_, _, w))| *w > 1e-15)
        .map(|(key, (prediction, m, w))| {
            let state = DensityMatrix::from_matrix(m.unscale(w))?;
            Ok((key, ConditionalOnP { prediction, probability: w, count: 0, state }))
        })
        .collect::<Result<_>>()?;
    Ok(Algorithm3Table { strata, trials: 0, exact: true })
}

/// Algorithm 3: the Algorithm 1 prediction with calibration dropped, paired with `ρ_p` from `table`.
pub fn algorithm3_run(
    state: &MultipartiteState,
    alg: &IidAlgorithmSpec,
    table: &Algorithm3Table,
    rng: &mut TrialRng,
) -> Result<(Prediction, DensityMatrix)> {
    let rec = algorithm1_run(state, alg, rng)?;
    let entry = table
        .get(&rec.p)
        .ok_or_else(|| Error::InvalidParameter(format!("prediction {} absent from the conditioning table", rec.p)))?;
    Ok((rec.p, entry.state.clone()))
}

/// `6√(k_A² ln²(k_A/δ_A) ln d / (N ε²))`.
pub fn theorem4_additive(k_a: usize, delta_a: f64, d: usize, n: usize, epsilon: f64) -> f64 {
    let ln = (k_a as f64 / delta_a).ln();
    6.0 * ((k_a * k_a) as f64 * ln * ln * (d as f64).ln() / (n as f64 * epsilon * epsilon)).sqrt()
}

/// `2·sup δ_A + 6√(…)` bound on `δ_B(2ε)`.
pub fn theorem4_rhs(sup_delta_a: f64, k_a: usize, delta_a: f64, d: usize, n: usize, epsilon: f64) -> f64 {
    2.0 * sup_delta_a + theorem4_additive(k_a, delta_a, d, n, epsilon)
}

/// `√(16 k² ln d / (N ε′²))` with `k` the number of learning sites.
pub fn lemma1_bound(k: usize, d: usize, n: usize, eps_prime: f64) -> f64 {
    (16.0 * (k * k) as f64 * (d as f64).ln() / (n as f64 * eps_prime * eps_prime)).sqrt()
}

/// `12√(2k³d² ln d / (N ε′²))`.
pub fn lemma4_bound(k: usize, d: usize, n: usize, eps_prime: f64) -> f64 {
    let k = k as f64;
    let d = d as f64;
    12.0 * (2.0 * k.powi(3) * d * d * d.ln() / (n as f64 * eps_prime * eps_prime)).sqrt()
}

/// Additive terms of the general-algorithm bound on `δ_B(ε + ε′)`.
pub fn theorem5_additive(k: usize, d: usize, n: usize, eps_prime: f64) -> f64 {
    let kk = k as f64;
    let dd = d as f64;
    lemma4_bound(k, d, n, eps_prime) + 2.0 * (2.0 * kk.powi(3) * dd * dd * dd.ln() / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{ket, HermitianOperator};
    use crate::measurements::Povm;
    use crate::rng::trial_rng;
    use crate::states::{basis_mixture, iid_state, MixtureBranch};
    use crate::noniid::wrapper::Algorithm1;

    fn oracle_shadow(sigma: &DensityMatrix) -> IidAlgorithmSpec {
        let value = HermitianOperator::outer(&ket(2, 0)).expectation(sigma.op());
        IidAlgorithmSpec::fixed(
            "oracle",
            vec![Arc::new(Povm::trivial(2))],
            0.1,
            Arc::new(move |_: &[usize]| Prediction::expectations(vec![value])),
        )
        .unwrap()
    }

    #[test]
    fn perfect_oracle_never_fails() {
        let sigma = DensityMatrix::from_diagonal(&[0.3, 0.7]).unwrap();
        let state = Arc::new(iid_state(&sigma, 12));
        let pred = SuccessPredicate::ShadowTomography { observables: vec![HermitianOperator::outer(&ket(2, 0))], epsilon: 1e-9 };
        let source = move |_: &mut TrialRng| Ok(state.clone());
        let est = error_probability_with_calibration(&source, &Algorithm1(oracle_shadow(&sigma)), &pred, 200, 1, "oracle").unwrap();
        assert_eq!(est.failures, 0);
        assert_eq!(est.delta_hat, 0.0);
    }

    #[test]
    fn random_guess_matches_branch_computation() {
        // Guessing a fair bit on the basis mixture with target |0⟩ at ε = 0.1:
        // branch |0⟩ fails on output 1, branch |1⟩ fails on output 0, so δ = 1/2.
        let state = Arc::new(basis_mixture(2, 12).unwrap());
        let planner: super::super::wrapper::Planner = Arc::new(|rng: &mut TrialRng| {
            let guess = rand::Rng::random::<bool>(rng);
            Ok(super::super::wrapper::RunPlan {
                devices: vec![Arc::new(Povm::trivial(2))],
                predictor: Box::new(move |_: &[usize]| Ok(Prediction::Bit(guess))),
            })
        });
        let alg = IidAlgorithmSpec::new("guess", 2, 1, 0.1, planner).unwrap();
        let pred = SuccessPredicate::VerifyPure { targets: vec![ket(2, 0)], epsilon: 0.1 };
        let source = move |_: &mut TrialRng| Ok(state.clone());
        let est = error_probability_with_calibration(&source, &Algorithm1(alg), &pred, 4000, 2, "guess").unwrap();
        assert!(est.ci_low - 0.02 <= 0.5 && 0.5 <= est.ci_high + 0.02, "{est:?}");
    }

    fn weight_state(n_qubits: usize, n_sites: usize) -> MultipartiteState {
        let d = 1 << n_qubits;
        let branches =
            (0..d).map(|y| MixtureBranch::repeated(1.0 / d as f64, DensityMatrix::basis_state(d, y), n_sites)).collect();
        MultipartiteState::mixture(branches).unwrap()
    }

    fn weight_alg(d: usize) -> IidAlgorithmSpec {
        IidAlgorithmSpec::fixed(
            "hamming-weight",
            vec![Arc::new(Povm::computational(d))],
            0.5,
            Arc::new(|x: &[usize]| Prediction::scalar(x[0].count_ones() as f64)),
        )
        .unwrap()
    }

    #[test]
    fn conditioning_on_weight_mixes_strings_of_that_weight() {
        let n = 3;
        let table = algorithm3_exact(&weight_state(n, 8), &weight_alg(1 << n)).unwrap();
        for s in table.strata() {
            let Prediction::Scalar(p) = s.prediction else { panic!("scalar prediction") };
            let strings: Vec<usize> = (0..8usize).filter(|y| y.count_ones() as f64 == p).collect();
            let diag: Vec<f64> =
                (0..8).map(|y| if strings.contains(&y) { 1.0 / strings.len() as f64 } else { 0.0 }).collect();
            let expect = DensityMatrix::from_diagonal(&diag).unwrap();
            assert!(s.state.trace_distance(&expect) < 1e-12);
        }
        let total: f64 = table.strata().map(|s| s.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_table_approaches_exact() {
        let state = weight_state(2, 8);
        let alg = weight_alg(4);
        let exact = algorithm3_exact(&state, &alg).unwrap();
        let (sampled, _) = algorithm3_sampled(&state, &alg, 3000, 3, "alg3").unwrap();
        for s in exact.strata() {
            let t = sampled.get(&s.prediction).unwrap();
            assert!(t.state.trace_distance(&s.state) < 0.05);
            assert!((t.probability - s.probability).abs() < 0.05);
        }
        let mut rng = trial_rng(4, "alg3-run", 0);
        let (p, rho) = algorithm3_run(&state, &alg, &exact, &mut rng).unwrap();
        assert!(rho.trace_distance(&exact.get(&p).unwrap().state) == 0.0);
    }

    #[test]
    fn constant_predictor_leaves_marginal() {
        let state = basis_mixture(2, 8).unwrap();
        let alg = IidAlgorithmSpec::fixed(
            "constant",
            vec![Arc::new(Povm::computational(2))],
            0.5,
            Arc::new(|_: &[usize]| Ok(Prediction::Bit(false))),
        )
        .unwrap();
        let table = algorithm3_exact(&state, &alg).unwrap();
        let s = table.get(&Prediction::Bit(false)).unwrap();
        assert!(s.state.trace_distance(&DensityMatrix::maximally_mixed(2)) < 1e-12);
    }

    #[test]
    fn bound_helpers_match_closed_forms() {
        let v = theorem4_additive(2, 0.1, 2, 1000, 0.1);
        let expect = 6.0 * (4.0 * 20f64.ln().powi(2) * 2f64.ln() / (1000.0 * 0.01)).sqrt();
        assert!((v - expect).abs() < 1e-12);
        assert!((lemma1_bound(1, 2, 16, 1.0) - (2f64.ln()).sqrt()).abs() < 1e-12);
        assert!((lemma4_bound(1, 2, 8, 1.0) - 12.0 * (8.0 * 2f64.ln() / 8.0).sqrt()).abs() < 1e-12);
        assert!(theorem5_additive(1, 2, 8, 1.0) > lemma4_bound(1, 2, 8, 1.0));
    }
}
