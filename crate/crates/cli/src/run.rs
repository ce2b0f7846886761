//! Subcommand execution. Each run returns a [`Record`] of metrics, bound values and
//! pass flags; bound values are evaluated from their formulas here, per run.

use serde_json::Value;

use noniid_qlearn::definetti::{
    appendix_b_agrees, appendix_b_numeric, gf_lhs, gf_rhs, randomized_definetti_lhs, theorem2_rhs,
};
use noniid_qlearn::linalg::{ket, CVector, DensityMatrix, HermitianOperator};
use noniid_qlearn::measurements::{
    distortion_lower_bound, pauli6_povm, pauli_basis_unitaries, single_qubit_cliffords, tensor_povm, BasisMeasurement,
    MeasurementFamily, Povm,
};
use noniid_qlearn::noniid::appendix_a::{appendix_a_report, mean_estimator};
use noniid_qlearn::noniid::error_prob::theorem4_rhs;
use noniid_qlearn::noniid::protocols::{
    fidelity_algorithm, mixedness_algorithm, shadow_tomography_algorithm, tomography_algorithm,
    verification_expectation, verify_pure_algorithm, ShadowLearner, ShadowMode, VerificationExpectationConfig,
};
use noniid_qlearn::noniid::wrapper::{coverage_failure_bound, coverage_failure_exact, first_hits};
use noniid_qlearn::noniid::{
    algorithm1_run, coverage_k, evaluate_success, ErrorEstimate, IidAlgorithmSpec, Prediction, SuccessPredicate,
};
use noniid_qlearn::rng::{run_trials, trial_rng};
use noniid_qlearn::shadows::shadow_mean_exact;
use noniid_qlearn::states::{
    basis_mixture, ghz_pure, ghz_vector, haar_mixture, haar_vector, iid_state, random_mixed_state, MultipartiteState,
};
use noniid_qlearn::stats::{binomial_sigma, mean_and_stderr};
use noniid_qlearn::Result;

use crate::config::{ExperimentConfig, FamilyKind, StateKind, SubcommandId, TargetKind};

/// Ordered result columns of one run.
#[derive(Clone, Debug, Default)]
pub struct Record {
    pub metrics: Vec<(&'static str, Value)>,
    pub bounds: Vec<(&'static str, f64)>,
    pub flags: Vec<(&'static str, bool)>,
}

impl Record {
    fn metric(mut self, name: &'static str, v: impl Into<Value>) -> Self {
        self.metrics.push((name, v.into()));
        self
    }

    fn bound(mut self, name: &'static str, v: f64) -> Self {
        self.bounds.push((name, v));
        self
    }

    fn flag(mut self, name: &'static str, v: bool) -> Self {
        self.flags.push((name, v));
        self
    }

    fn estimate(self, prefix: &'static [&'static str; 3], e: &ErrorEstimate) -> Self {
        self.metric(prefix[0], e.delta_hat).metric(prefix[1], e.ci_low).metric(prefix[2], e.ci_high)
    }

    /// True when no flag reports a violation.
    pub fn pass(&self) -> bool {
        self.flags.iter().all(|f| f.1)
    }
}

fn qubits(d: usize) -> usize {
    d.trailing_zeros() as usize
}

pub fn target_vector(target: TargetKind, d: usize) -> Result<CVector> {
    Ok(match target {
        TargetKind::Zero => ket(d, 0),
        TargetKind::Plus => CVector::from_element(d, noniid_qlearn::linalg::c(1.0 / (d as f64).sqrt(), 0.0)),
        TargetKind::Ghz => ghz_vector(qubits(d))?,
    })
}

fn uses_target(sub: SubcommandId) -> bool {
    matches!(sub, SubcommandId::Verify | SubcommandId::VerifyExpectation | SubcommandId::Fidelity)
}

/// `iid` is the target's i.i.d. power for target-based subcommands and a seeded
/// random mixed state's power otherwise.
fn build_state(cfg: &ExperimentConfig) -> Result<MultipartiteState> {
    let mut rng = trial_rng(cfg.seed, "cli-state", 0);
    match cfg.state {
        StateKind::Iid if uses_target(cfg.subcommand) => {
            Ok(iid_state(&DensityMatrix::pure(&target_vector(cfg.target, cfg.d)?)?, cfg.n))
        }
        StateKind::Iid => Ok(iid_state(&random_mixed_state(cfg.d, &mut rng), cfg.n)),
        StateKind::BasisMixture => basis_mixture(cfg.d, cfg.n),
        StateKind::HaarMixture => haar_mixture(cfg.n, cfg.d, cfg.branches, &mut rng),
        StateKind::Ghz => ghz_pure(cfg.n),
    }
}

fn build_family(cfg: &ExperimentConfig) -> Result<MeasurementFamily> {
    Ok(match cfg.family {
        FamilyKind::Computational => MeasurementFamily::computational(cfg.d),
        FamilyKind::Pauli3 => MeasurementFamily::pauli3(),
        FamilyKind::Clifford1 => MeasurementFamily::clifford1(),
        FamilyKind::CliffordN => MeasurementFamily::clifford_n(qubits(cfg.d))?,
    })
}

/// `pauli6^{⊗n}` on n qubits.
fn pauli6_power(d: usize) -> Result<Povm> {
    tensor_povm(&vec![pauli6_povm(); qubits(d)])
}

pub fn run(cfg: &ExperimentConfig) -> Result<Record> {
    match cfg.subcommand {
        SubcommandId::DefinettiThm2 => definetti_thm2(cfg),
        SubcommandId::DefinettiGf => definetti_gf(cfg),
        SubcommandId::AppendixB => appendix_b(cfg),
        SubcommandId::AppendixA => appendix_a(cfg),
        SubcommandId::ShadowsBench => shadows_bench(cfg),
        SubcommandId::Verify => verify(cfg),
        SubcommandId::VerifyExpectation => verify_expectation(cfg),
        SubcommandId::Fidelity => fidelity(cfg),
        SubcommandId::Tomography => {
            let alg = tomography_algorithm(cfg.k_a, cfg.delta_a)?;
            wrapped(cfg, &alg, &SuccessPredicate::Tomography { epsilon: cfg.epsilon }, cfg.k_a)
        }
        SubcommandId::Mixedness => {
            let alg = mixedness_algorithm(cfg.k_a, cfg.delta_a, cfg.epsilon)?;
            wrapped(cfg, &alg, &SuccessPredicate::Mixedness { epsilon: cfg.epsilon }, cfg.k_a)
        }
        SubcommandId::Coupon => coupon(cfg),
        SubcommandId::Distortion => distortion(cfg),
    }
}

fn definetti_thm2(cfg: &ExperimentConfig) -> Result<Record> {
    let state = build_state(cfg)?;
    let family = build_family(cfg)?;
    let est = randomized_definetti_lhs(&state, &family, cfg.k, cfg.trials, cfg.seed, false)?;
    let rhs = theorem2_rhs(cfg.k, cfg.d, cfg.n);
    Ok(Record::default()
        .metric("family_id", family.id())
        .metric("lhs_mean", est.lhs_mean)
        .metric("std_error", est.std_error)
        .bound("rhs", rhs)
        .flag("holds", est.lhs_mean + 3.0 * est.std_error <= rhs))
}

fn definetti_gf(cfg: &ExperimentConfig) -> Result<Record> {
    let state = build_state(cfg)?;
    let est = gf_lhs(&state, &pauli6_power(cfg.d)?, cfg.k, cfg.trials, cfg.seed)?;
    let rhs = gf_rhs(cfg.k, cfg.d, cfg.n);
    Ok(Record::default()
        .metric("lhs_mean", est.lhs_mean)
        .metric("std_error", est.std_error)
        .bound("rhs", rhs)
        .flag("holds", est.lhs_mean + 3.0 * est.std_error <= rhs))
}

fn appendix_b(cfg: &ExperimentConfig) -> Result<Record> {
    let rec = appendix_b_numeric(cfg.l, cfg.w, cfg.k, cfg.quad_points)?;
    let numeric = rec.numeric_reduced.unwrap_or([f64::NAN; 2]);
    let lhs = rec.lhs_numeric.unwrap_or(f64::NAN);
    let bound = (9.0 * cfg.k as f64 * ((cfg.l + 1) as f64).ln() / cfg.l as f64).sqrt();
    Ok(Record::default()
        .metric("p_star", rec.p_star)
        .metric("numeric_p", numeric[1])
        .metric("lhs_numeric", lhs)
        .bound("rhs", bound)
        .flag("reduced_state_agrees", appendix_b_agrees(&rec, 1e-8))
        .flag("holds", lhs <= bound))
}

fn appendix_a(cfg: &ExperimentConfig) -> Result<Record> {
    let rep = appendix_a_report(cfg.n, cfg.epsilon, mean_estimator)?;
    let frac = |f: noniid_qlearn::noniid::appendix_a::Fraction| format!("{}/{}", f.num, f.den);
    Ok(Record::default()
        .metric("delta_prime_balanced", frac(rep.delta_prime_balanced))
        .metric("delta_prime_shifted", frac(rep.delta_prime_shifted))
        .metric("delta_prime_lower", rep.delta_prime_lower)
        .bound("quarter", 0.25)
        .flag("distributions_equal", rep.distributions_equal)
        .flag("at_least_quarter", rep.at_least_quarter))
}

fn shadows_bench(cfg: &ExperimentConfig) -> Result<Record> {
    let mut rng = trial_rng(cfg.seed, "cli-shadows-setup", 0);
    let sigma = random_mixed_state(cfg.d, &mut rng);
    let observables: Vec<HermitianOperator> =
        (0..4).map(|_| HermitianOperator::outer(&haar_vector(cfg.d, &mut rng))).collect();
    let exact: Vec<f64> = observables.iter().map(|o| o.expectation(sigma.op())).collect();
    let learner = ShadowLearner::new(ShadowMode::GlobalClifford { n_qubits: qubits(cfg.d) }, observables, cfg.groups)?;
    let alg = shadow_tomography_algorithm(&learner, cfg.k_a, cfg.delta_a)?;
    let errors: Vec<f64> = run_trials(cfg.seed, cfg.subcommand.name(), cfg.trials, |_, rng| -> Result<f64> {
        let Prediction::ExpectationTuple(mu) = alg.run_iid(&sigma, rng)? else { unreachable!("shadow predictions") };
        Ok(mu.iter().zip(&exact).map(|(m, e)| (m - e).abs()).fold(0.0, f64::max))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let (mean_err, se) = mean_and_stderr(&errors);
    let fails = ErrorEstimate::from_counts(errors.iter().filter(|&&e| e > cfg.epsilon).count(), cfg.trials)?;
    let mut rec = Record::default()
        .metric("mean_max_error", mean_err)
        .metric("std_error", se)
        .estimate(&["failure_rate", "failure_ci_low", "failure_ci_high"], &fails);
    if cfg.d == 2 {
        let pauli: Vec<BasisMeasurement> =
            pauli_basis_unitaries().into_iter().map(BasisMeasurement::new).collect::<Result<_>>()?;
        let cliff: Vec<BasisMeasurement> =
            single_qubit_cliffords().iter().cloned().map(BasisMeasurement::new).collect::<Result<_>>()?;
        let dev = shadow_mean_exact(&sigma, &pauli, &[1.0 / 3.0; 3])?
            .max_abs_diff(sigma.op())
            .max(shadow_mean_exact(&sigma, &cliff, &[1.0 / 24.0; 24])?.max_abs_diff(sigma.op()));
        rec = rec.metric("exact_mean_deviation", dev).bound("unbiased_tolerance", 1e-12).flag("unbiased", dev <= 1e-12);
    }
    Ok(rec)
}

/// Runs Algorithm 1 around `alg` and scores at ε and 2ε against the calibrated test state.
fn wrapped(cfg: &ExperimentConfig, alg: &IidAlgorithmSpec, predicate: &SuccessPredicate, devices: usize) -> Result<Record> {
    let state = build_state(cfg)?;
    let wide = predicate.with_epsilon(2.0 * cfg.epsilon);
    let runs = run_trials(cfg.seed, cfg.subcommand.name(), cfg.trials, |_, rng| -> Result<(bool, bool, bool)> {
        let rec = algorithm1_run(&state, alg, rng)?;
        Ok((
            evaluate_success(predicate, &rec.p, &rec.conditional_test_state)?,
            evaluate_success(&wide, &rec.p, &rec.conditional_test_state)?,
            rec.coverage_ok,
        ))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let at_eps = ErrorEstimate::from_counts(runs.iter().filter(|r| !r.0).count(), cfg.trials)?;
    let at_2eps = ErrorEstimate::from_counts(runs.iter().filter(|r| !r.1).count(), cfg.trials)?;
    let rhs = theorem4_rhs(cfg.delta_a, devices, cfg.delta_a, cfg.d, cfg.n, cfg.epsilon);
    Ok(Record::default()
        .metric("coverage_k", coverage_k(devices, cfg.delta_a))
        .metric("coverage_misses", runs.iter().filter(|r| !r.2).count())
        .estimate(&["delta_hat", "delta_ci_low", "delta_ci_high"], &at_eps)
        .estimate(&["delta_hat_2eps", "delta_2eps_ci_low", "delta_2eps_ci_high"], &at_2eps)
        .bound("wrapper_rhs", rhs)
        .flag("within_wrapper_bound", at_2eps.ci_low <= rhs))
}

fn verify(cfg: &ExperimentConfig) -> Result<Record> {
    let targets = vec![target_vector(cfg.target, cfg.d)?];
    let mode = ShadowMode::GlobalClifford { n_qubits: qubits(cfg.d) };
    let alg = verify_pure_algorithm(&targets, cfg.epsilon, mode, cfg.k_a, cfg.groups, cfg.delta_a)?;
    wrapped(cfg, &alg, &SuccessPredicate::VerifyPure { targets, epsilon: cfg.epsilon }, cfg.k_a)
}

fn fidelity(cfg: &ExperimentConfig) -> Result<Record> {
    let target = target_vector(cfg.target, cfg.d)?;
    let alg = fidelity_algorithm(&target, cfg.epsilon, cfg.delta, cfg.delta_a)?;
    let devices = crate::config::fidelity_max_devices(&target, cfg.epsilon, cfg.delta).unwrap_or(alg.k_a);
    wrapped(cfg, &alg, &SuccessPredicate::FidelityEst { target, epsilon: cfg.epsilon }, devices)
}

fn verify_expectation(cfg: &ExperimentConfig) -> Result<Record> {
    let psi = target_vector(cfg.target, cfg.d)?;
    let state = build_state(cfg)?;
    let vcfg = VerificationExpectationConfig { epsilon: cfg.epsilon, k: cfg.k, groups: cfg.groups, trials: cfg.trials };
    let r = verification_expectation(&state, &psi, &vcfg, cfg.seed, cfg.subcommand.name())?;
    Ok(Record::default()
        .metric("acceptance", r.acceptance)
        .metric("acceptance_ci_low", r.acceptance_ci.0)
        .metric("acceptance_ci_high", r.acceptance_ci.1)
        .metric("soundness", r.soundness)
        .metric("soundness_halfwidth", r.soundness_halfwidth)
        .bound("epsilon", cfg.epsilon)
        .flag("soundness_within_epsilon", r.soundness - r.soundness_halfwidth <= cfg.epsilon))
}

fn coupon(cfg: &ExperimentConfig) -> Result<Record> {
    let big_k = coverage_k(cfg.k_a, cfg.delta_a);
    let k_a = cfg.k_a;
    let misses = run_trials(cfg.seed, cfg.subcommand.name(), cfg.trials, |_, rng| {
        use rand::Rng;
        let r: Vec<usize> = (0..big_k).map(|_| rng.random_range(0..k_a)).collect();
        first_hits(&r, k_a).is_none()
    })
    .into_iter()
    .filter(|&m| m)
    .count();
    let rate = misses as f64 / cfg.trials as f64;
    let bound = coverage_failure_bound(k_a, big_k);
    Ok(Record::default()
        .metric("coverage_k", big_k)
        .metric("miss_rate", rate)
        .metric("miss_exact", coverage_failure_exact(k_a, big_k))
        .bound("union_bound", bound)
        .flag("holds", rate <= bound + 3.0 * binomial_sigma(bound.min(1.0), cfg.trials)))
}

fn distortion(cfg: &ExperimentConfig) -> Result<Record> {
    let mut rng = trial_rng(cfg.seed, cfg.subcommand.name(), 0);
    let kappa = distortion_lower_bound(&pauli6_power(cfg.d)?, cfg.trials, &mut rng)?;
    let limit = 2.0 * cfg.d as f64;
    Ok(Record::default().metric("distortion_lower_bound", kappa).bound("two_d", limit).flag("holds", kappa <= limit))
}
