//! Application protocols: the i.i.d. learners that Algorithm 1 wraps, and the
//! stand-alone verification-in-expectation experiment.

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    c, hermitian_eigh, pauli_x, pauli_y, pauli_z, CMatrix, CVector, DensityMatrix, HermitianOperator,
};
use crate::measurements::{
    pauli6_povm, pauli_basis_unitaries, random_clifford_unitary, single_qubit_cliffords, two_qubit_cliffords,
    BasisMeasurement, Povm,
};
use crate::rng::{run_trials, TrialRng};
use crate::shadows::{global_snapshot_overlap, local_snapshot, median_of_means};
use crate::states::{Conditioner, MultipartiteState};
use crate::stats::{mean_and_stderr, wilson_interval, Z95};

use super::predict::Prediction;
use super::wrapper::{algorithm1_run, IidAlgorithmSpec, Planner, RunPlan, RunRecord};

/// Linear inversion of six-outcome Pauli statistics: `r_b = 3(p_{b+} − p_{b−})`, `ρ = (I + r·σ)/2`.
pub fn pauli6_linear_inversion(probs: &[f64]) -> HermitianOperator {
    let r = |b: usize| 3.0 * (probs[2 * b] - probs[2 * b + 1]);
    let m = CMatrix::identity(2, 2) + pauli_z().scale(r(0)) + pauli_x().scale(r(1)) + pauli_y().scale(r(2));
    HermitianOperator::from_symmetrized(m * c(0.5, 0.0))
}

/// Euclidean projection of a real vector onto the probability simplex.
pub fn project_to_simplex(x: &[f64]) -> Vec<f64> {
    let mut u = x.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    x.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Nearest density matrix in Frobenius norm: keep the eigenbasis, project the spectrum.
pub fn project_to_density(op: &HermitianOperator) -> Result<DensityMatrix> {
    let (vals, vecs) = hermitian_eigh(op);
    let p = project_to_simplex(&vals);
    let diag = CMatrix::from_diagonal(&CVector::from_iterator(p.len(), p.iter().map(|&x| c(x, 0.0))));
    DensityMatrix::from_matrix(&vecs * diag * vecs.adjoint())
}

fn outcome_frequencies(outcomes: &[usize], n_outcomes: usize) -> Vec<f64> {
    let mut f = vec![0.0; n_outcomes];
    outcomes.iter().for_each(|&x| f[x] += 1.0);
    f.iter_mut().for_each(|v| *v /= outcomes.len() as f64);
    f
}

/// Single-qubit tomography estimate from pauli6 outcomes.
pub fn tomography_estimate(outcomes: &[usize]) -> Result<DensityMatrix> {
    if outcomes.is_empty() {
        return Err(Error::Empty);
    }
    project_to_density(&pauli6_linear_inversion(&outcome_frequencies(outcomes, 6)))
}

/// `k_a` pauli6 measurements, linear inversion and projection onto states.
pub fn tomography_algorithm(k_a: usize, delta_a: f64) -> Result<IidAlgorithmSpec> {
    let device = Arc::new(pauli6_povm());
    IidAlgorithmSpec::fixed(
        "pauli6-tomography",
        vec![device; k_a],
        delta_a,
        Arc::new(|x: &[usize]| Ok(Prediction::StateDescription(tomography_estimate(x)?))),
    )
}

/// Outputs 1 iff `‖σ̂ − I/2‖₁ > 3ε/2`, the midpoint of the promise gap `[ε, 2ε]`.
pub fn mixedness_algorithm(k_a: usize, delta_a: f64, epsilon: f64) -> Result<IidAlgorithmSpec> {
    let device = Arc::new(pauli6_povm());
    let threshold = 1.5 * epsilon;
    IidAlgorithmSpec::fixed(
        "pauli6-mixedness",
        vec![device; k_a],
        delta_a,
        Arc::new(move |x: &[usize]| {
            let hat = tomography_estimate(x)?;
            Ok(Prediction::Bit(super::predict::distance_to_maximally_mixed(&hat) > threshold))
        }),
    )
}

pub fn tomography_protocol(state: &MultipartiteState, k_a: usize, delta_a: f64, rng: &mut TrialRng) -> Result<RunRecord> {
    algorithm1_run(state, &tomography_algorithm(k_a, delta_a)?, rng)
}

pub fn mixedness_protocol(
    state: &MultipartiteState,
    epsilon: f64,
    k_a: usize,
    delta_a: f64,
    rng: &mut TrialRng,
) -> Result<RunRecord> {
    algorithm1_run(state, &mixedness_algorithm(k_a, delta_a, epsilon)?, rng)
}

/// Randomized measurement primitive behind classical shadows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ShadowMode {
    /// Uniform Clifford on all `n_qubits` of a site.
    GlobalClifford { n_qubits: usize },
    /// Independent uniform Pauli basis per qubit.
    LocalPauli { n_qubits: usize },
}

impl ShadowMode {
    pub fn site_dim(&self) -> usize {
        match *self {
            Self::GlobalClifford { n_qubits } | Self::LocalPauli { n_qubits } => 1 << n_qubits,
        }
    }
}

/// Bases enumerated once so that per-run planning only draws indices.
enum BasisTable {
    Listed { bases: Vec<(BasisMeasurement, Arc<Povm>)> },
    Sampled { n_qubits: usize },
    Local { bases: Vec<(Vec<BasisMeasurement>, Arc<Povm>)> },
}

/// Largest local-Pauli site enumerated explicitly (3ⁿ bases).
const MAX_LOCAL_QUBITS: usize = 4;

impl BasisTable {
    fn new(mode: ShadowMode) -> Result<Self> {
        let wrap = |u: &CMatrix| -> Result<(BasisMeasurement, Arc<Povm>)> {
            let b = BasisMeasurement::new(u.clone())?;
            let p = Arc::new(b.povm());
            Ok((b, p))
        };
        match mode {
            ShadowMode::GlobalClifford { n_qubits: 0 } | ShadowMode::LocalPauli { n_qubits: 0 } => {
                Err(Error::InvalidParameter("shadows need at least one qubit".into()))
            }
            ShadowMode::GlobalClifford { n_qubits: 1 } => {
                Ok(Self::Listed { bases: single_qubit_cliffords().iter().map(wrap).collect::<Result<_>>()? })
            }
            ShadowMode::GlobalClifford { n_qubits: 2 } => {
                Ok(Self::Listed { bases: two_qubit_cliffords().iter().map(wrap).collect::<Result<_>>()? })
            }
            ShadowMode::GlobalClifford { n_qubits } => Ok(Self::Sampled { n_qubits }),
            ShadowMode::LocalPauli { n_qubits } if n_qubits > MAX_LOCAL_QUBITS => {
                Err(Error::Capacity(format!("local Pauli shadows support up to {MAX_LOCAL_QUBITS} qubits per site")))
            }
            ShadowMode::LocalPauli { n_qubits } => {
                let units = pauli_basis_unitaries();
                let mut bases = Vec::new();
                for idx in 0..3usize.pow(n_qubits as u32) {
                    // Qubit 0 is the most significant base-3 digit.
                    let picks: Vec<usize> = (0..n_qubits).rev().map(|q| idx / 3usize.pow(q as u32) % 3).collect();
                    let per_qubit =
                        picks.iter().map(|&b| BasisMeasurement::new(units[b].clone())).collect::<Result<Vec<_>>>()?;
                    let joint = picks.iter().skip(1).fold(units[picks[0]].clone(), |acc, &b| acc.kronecker(&units[b]));
                    let povm = Arc::new(BasisMeasurement::new(joint)?.povm());
                    bases.push((per_qubit, povm));
                }
                Ok(Self::Local { bases })
            }
        }
    }
}

/// One drawn basis of a shadow plan.
enum DrawnBasis {
    Global(BasisMeasurement),
    Local(usize),
}

/// Classical-shadow learner producing median-of-means estimates of `tr(O_i ρ)`.
#[derive(Clone)]
pub struct ShadowLearner {
    pub mode: ShadowMode,
    pub observables: Arc<Vec<HermitianOperator>>,
    pub groups: usize,
    table: Arc<BasisTable>,
}

impl std::fmt::Debug for ShadowLearner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShadowLearner")
            .field("mode", &self.mode)
            .field("observables", &self.observables.len())
            .field("groups", &self.groups)
            .finish()
    }
}

impl ShadowLearner {
    pub fn new(mode: ShadowMode, observables: Vec<HermitianOperator>, groups: usize) -> Result<Self> {
        if observables.is_empty() {
            return Err(Error::Empty);
        }
        if groups == 0 {
            return Err(Error::InvalidParameter("median of means needs at least one group".into()));
        }
        let d = mode.site_dim();
        if let Some(o) = observables.iter().find(|o| o.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: o.dim() });
        }
        Ok(Self { mode, observables: Arc::new(observables), groups, table: Arc::new(BasisTable::new(mode)?) })
    }

    fn draw(&self, rng: &mut TrialRng) -> Result<(DrawnBasis, Arc<Povm>)> {
        Ok(match self.table.as_ref() {
            BasisTable::Listed { bases } => {
                let (b, p) = &bases[rng.random_range(0..bases.len())];
                (DrawnBasis::Global(b.clone()), p.clone())
            }
            BasisTable::Sampled { n_qubits } => {
                let b = BasisMeasurement::new(random_clifford_unitary(*n_qubits, rng)?)?;
                let p = Arc::new(b.povm());
                (DrawnBasis::Global(b), p)
            }
            BasisTable::Local { bases } => {
                let i = rng.random_range(0..bases.len());
                (DrawnBasis::Local(i), bases[i].1.clone())
            }
        })
    }

    /// `tr(O ρ̂)` for the snapshot of outcome `v` in `basis`, for every observable.
    fn snapshot_values(&self, basis: &DrawnBasis, v: usize, out: &mut [Vec<f64>]) -> Result<()> {
        match basis {
            DrawnBasis::Global(b) => {
                let d = b.dim() as f64;
                let phi: CVector = b.unitary().row(v).adjoint();
                for (o, col) in self.observables.iter().zip(out.iter_mut()) {
                    // (d+1)⟨φ|O|φ⟩ − tr O with |φ⟩ = U†|v⟩.
                    let q = (phi.adjoint() * o.matrix() * &phi)[(0, 0)].re;
                    col.push((d + 1.0) * q - o.trace());
                }
            }
            DrawnBasis::Local(i) => {
                let BasisTable::Local { bases } = self.table.as_ref() else { unreachable!("local draw from local table") };
                let per_qubit = &bases[*i].0;
                let n = per_qubit.len();
                let pairs: Vec<(BasisMeasurement, usize)> =
                    per_qubit.iter().enumerate().map(|(q, b)| (b.clone(), (v >> (n - 1 - q)) & 1)).collect();
                let snap = local_snapshot(&pairs)?;
                for (o, col) in self.observables.iter().zip(out.iter_mut()) {
                    col.push(snap.matrix.expectation(o));
                }
            }
        }
        Ok(())
    }

    /// Planner for `k_a` snapshots; `finish` maps the raw estimates to a prediction.
    pub fn planner(
        &self,
        k_a: usize,
        finish: Arc<dyn Fn(Vec<f64>) -> Result<Prediction> + Send + Sync>,
    ) -> Result<Planner> {
        if k_a < self.groups {
            return Err(Error::InvalidParameter(format!("{k_a} snapshots cannot fill {} groups", self.groups)));
        }
        let learner = self.clone();
        Ok(Arc::new(move |rng: &mut TrialRng| {
            let (bases, devices): (Vec<DrawnBasis>, Vec<Arc<Povm>>) =
                (0..k_a).map(|_| learner.draw(rng)).collect::<Result<Vec<_>>>()?.into_iter().unzip();
            let learner = learner.clone();
            let finish = finish.clone();
            Ok(RunPlan {
                devices,
                predictor: Box::new(move |x: &[usize]| {
                    let mut values = vec![Vec::with_capacity(x.len()); learner.observables.len()];
                    for (b, &v) in bases.iter().zip(x) {
                        learner.snapshot_values(b, v, &mut values)?;
                    }
                    let estimates = values
                        .iter()
                        .map(|col| Ok(median_of_means(col, learner.groups)?.estimate))
                        .collect::<Result<Vec<_>>>()?;
                    finish(estimates)
                }),
            })
        }))
    }
}

/// Shadow tomography: clipped median-of-means estimates of every `tr(O_i ρ)`.
pub fn shadow_tomography_algorithm(learner: &ShadowLearner, k_a: usize, delta_a: f64) -> Result<IidAlgorithmSpec> {
    let planner = learner.planner(k_a, Arc::new(Prediction::expectations))?;
    IidAlgorithmSpec::new("shadow-tomography", learner.mode.site_dim(), k_a, delta_a, planner)
}

/// Accepts (outputs 0) iff some target has `μ_i ≥ 1 − ε/2`.
pub fn verify_pure_algorithm(
    targets: &[CVector],
    epsilon: f64,
    mode: ShadowMode,
    k_a: usize,
    groups: usize,
    delta_a: f64,
) -> Result<IidAlgorithmSpec> {
    if targets.is_empty() {
        return Err(Error::Empty);
    }
    let obs = targets.iter().map(HermitianOperator::outer).collect();
    let learner = ShadowLearner::new(mode, obs, groups)?;
    let threshold = 1.0 - epsilon / 2.0;
    let planner = learner.planner(
        k_a,
        Arc::new(move |mu: Vec<f64>| Ok(Prediction::Bit(!mu.iter().any(|&m| m >= threshold)))),
    )?;
    IidAlgorithmSpec::new("verify-pure", mode.site_dim(), k_a, delta_a, planner)
}

/// Parameters of the wrapped pure-state verifier.
#[derive(Clone, Debug)]
pub struct VerifyPureConfig {
    pub targets: Vec<CVector>,
    pub epsilon: f64,
    pub delta_a: f64,
    pub mode: ShadowMode,
    pub k_a: usize,
    pub groups: usize,
}

pub fn verify_pure_protocol(state: &MultipartiteState, cfg: &VerifyPureConfig, rng: &mut TrialRng) -> Result<RunRecord> {
    let alg = verify_pure_algorithm(&cfg.targets, cfg.epsilon, cfg.mode, cfg.k_a, cfg.groups, cfg.delta_a)?;
    algorithm1_run(state, &alg, rng)
}

/// Tensor product of single-qubit Paulis; digit 0..4 is I, X, Y, Z, qubit 0 most significant.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PauliString(pub Vec<u8>);

impl PauliString {
    pub fn matrix(&self) -> CMatrix {
        let single = |p: u8| match p {
            0 => CMatrix::identity(2, 2),
            1 => pauli_x(),
            2 => pauli_y(),
            _ => pauli_z(),
        };
        self.0.iter().fold(CMatrix::identity(1, 1), |acc, &p| acc.kronecker(&single(p)))
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|&p| p == 0)
    }

    pub fn label(&self) -> String {
        self.0.iter().map(|&p| ['I', 'X', 'Y', 'Z'][p as usize]).collect()
    }
}

/// Largest qubit count for which all 4ⁿ Paulis are enumerated.
pub const MAX_DFE_QUBITS: usize = 2;

/// Pauli term of the fidelity-estimation law.
#[derive(Clone, Debug)]
pub struct DfeTerm {
    pub pauli: PauliString,
    /// `⟨Ψ|P|Ψ⟩`.
    pub expectation: f64,
    /// `⟨Ψ|P|Ψ⟩² / d`.
    pub probability: f64,
}

/// The law `⟨Ψ|P|Ψ⟩²/d` over n-qubit Paulis, zero-probability terms dropped.
pub fn dfe_sampling_law(psi: &CVector) -> Result<Vec<DfeTerm>> {
    crate::linalg::check_normalized(psi)?;
    let d = psi.len();
    if !d.is_power_of_two() || d < 2 {
        return Err(Error::InvalidParameter(format!("target dimension {d} is not a qubit register")));
    }
    let n = d.trailing_zeros() as usize;
    if n > MAX_DFE_QUBITS {
        return Err(Error::Capacity(format!("fidelity estimation enumerates Paulis for up to {MAX_DFE_QUBITS} qubits")));
    }
    let mut terms = Vec::new();
    for idx in 0..4usize.pow(n as u32) {
        let digits: Vec<u8> = (0..n).rev().map(|q| (idx / 4usize.pow(q as u32) % 4) as u8).collect();
        let pauli = PauliString(digits);
        let e = (psi.adjoint() * pauli.matrix() * psi)[(0, 0)].re;
        let probability = e * e / d as f64;
        if probability > 1e-15 {
            terms.push(DfeTerm { pauli, expectation: e, probability });
        }
    }
    let beyond_identity: f64 = terms.iter().filter(|t| !t.pauli.is_identity()).map(|t| t.probability).sum();
    if beyond_identity < 1e-12 {
        return Err(Error::DegenerateLaw("no Pauli beyond the identity has nonzero overlap with the target".into()));
    }
    let total: f64 = terms.iter().map(|t| t.probability).sum();
    terms.iter_mut().for_each(|t| t.probability /= total);
    Ok(terms)
}

fn ceil_tol(x: f64) -> usize {
    // Guards against 150.00000000000003 style round-off in exact ratios.
    (x - 1e-9).ceil().max(1.0) as usize
}

/// `l = ⌈1/(ε²δ)⌉` sampled Paulis.
pub fn dfe_num_paulis(epsilon: f64, delta: f64) -> usize {
    ceil_tol(1.0 / (epsilon * epsilon * delta))
}

/// `m_i = ⌈2 ln(2/δ) δ / ⟨Ψ|P_i|Ψ⟩²⌉` repetitions for a Pauli with expectation `e`.
pub fn dfe_repetitions(expectation: f64, delta: f64) -> usize {
    ceil_tol(2.0 * (2.0 / delta).ln() * delta / (expectation * expectation))
}

/// Two-outcome measurement of P: outcome 0 is `(I − P)/2`, outcome 1 is `(I + P)/2`.
pub fn pauli_povm(p: &PauliString) -> Result<Povm> {
    let m = p.matrix();
    let id = CMatrix::identity(m.nrows(), m.nrows());
    let minus = HermitianOperator::new((&id - &m) * c(0.5, 0.0))?;
    let plus = HermitianOperator::new((&id + &m) * c(0.5, 0.0))?;
    Povm::new(vec![minus, plus], Some(vec!["-1".into(), "+1".into()]))
}

/// Direct fidelity estimation: `S = (1/l) Σ_i (1/(m_i⟨P_i⟩)) Σ_j (2A_ij − 1)`.
///
/// The device list is the realized multiset of Pauli measurements, so `k_A = Σ m_i`
/// varies between runs; the nominal `k_a` is `l`.
pub fn fidelity_algorithm(psi: &CVector, epsilon: f64, delta: f64, delta_a: f64) -> Result<IidAlgorithmSpec> {
    if !(delta > 0.0 && delta < 1.0) || epsilon <= 0.0 {
        return Err(Error::InvalidParameter(format!("need ε > 0 and δ in (0, 1), got ε = {epsilon}, δ = {delta}")));
    }
    let law = dfe_sampling_law(psi)?;
    let povms = law.iter().map(|t| Ok(Arc::new(pauli_povm(&t.pauli)?))).collect::<Result<Vec<_>>>()?;
    let reps: Vec<usize> = law.iter().map(|t| dfe_repetitions(t.expectation, delta)).collect();
    let weights: Vec<f64> = law.iter().map(|t| t.probability).collect();
    let sampler = rand::distr::weighted::WeightedIndex::new(&weights).map_err(|e| Error::DegenerateLaw(e.to_string()))?;
    let l = dfe_num_paulis(epsilon, delta);
    let law = Arc::new(law);
    let planner: Planner = Arc::new(move |rng: &mut TrialRng| {
        let picks: Vec<usize> = (0..l).map(|_| rng.sample(&sampler)).collect();
        let devices = picks.iter().flat_map(|&i| std::iter::repeat_n(povms[i].clone(), reps[i])).collect();
        let law = law.clone();
        let reps = reps.clone();
        Ok(RunPlan {
            devices,
            predictor: Box::new(move |x: &[usize]| {
                let mut pos = 0;
                let mut s = 0.0;
                for &i in &picks {
                    let m = reps[i];
                    let signed: f64 = x[pos..pos + m].iter().map(|&a| 2.0 * a as f64 - 1.0).sum();
                    s += signed / (m as f64 * law[i].expectation);
                    pos += m;
                }
                Prediction::scalar(s / picks.len() as f64)
            }),
        })
    });
    IidAlgorithmSpec::new("direct-fidelity", psi.len(), l, delta_a, planner)
}

pub fn fidelity_protocol(
    state: &MultipartiteState,
    psi: &CVector,
    epsilon: f64,
    delta: f64,
    delta_a: f64,
    rng: &mut TrialRng,
) -> Result<RunRecord> {
    algorithm1_run(state, &fidelity_algorithm(psi, epsilon, delta, delta_a)?, rng)
}

/// Verification-in-expectation experiment with global Clifford shadows.
#[derive(Clone, Debug, Serialize)]
pub struct VerificationExpectationConfig {
    pub epsilon: f64,
    /// Learning sites `0..k`.
    pub k: usize,
    /// Median-of-means groups.
    pub groups: usize,
    pub trials: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VerificationExpectation {
    /// `tr(Π_Accept ρ)`.
    pub acceptance: f64,
    pub acceptance_ci: (f64, f64),
    /// `tr((Π_Accept ⊗ (I − Ψ)) ρ)`.
    pub soundness: f64,
    pub soundness_halfwidth: f64,
    pub trials: usize,
}

/// Asymptotic parameters: `K = 2 ln(1/ε)` groups and `k = 4e²5² ln(1/ε)/ε²` snapshots.
pub fn verification_expectation_parameters(epsilon: f64) -> (usize, usize) {
    let ln = (1.0 / epsilon).ln();
    let groups = ((2.0 * ln).ceil() as usize).max(1);
    let k = (4.0 * std::f64::consts::E.powi(2) * 25.0 * ln / (epsilon * epsilon)).ceil() as usize;
    (groups, k.max(groups))
}

/// Samples `(l, U, v, w)`: accept iff `μ_v ≥ 1 − ε/5`, and weighs acceptance by the
/// infidelity of the test site conditioned on `(v, w)`. On an i.i.d. `Ψ^{⊗N}` input
/// the acceptance is the completeness; on any input the weighted mean is the soundness functional.
pub fn verification_expectation(
    state: &MultipartiteState,
    psi: &CVector,
    cfg: &VerificationExpectationConfig,
    master: u64,
    stream: &str,
) -> Result<VerificationExpectation> {
    crate::linalg::check_normalized(psi)?;
    let d = state.site_dim();
    if psi.len() != d || !d.is_power_of_two() || d < 2 {
        return Err(Error::DimensionMismatch { expected: d, got: psi.len() });
    }
    let n = state.n_sites();
    if cfg.k == 0 || 2 * cfg.k >= n || cfg.groups == 0 || cfg.groups > cfg.k {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= groups <= k < N/2, got groups = {}, k = {}, N = {n}",
            cfg.groups, cfg.k
        )));
    }
    let learner = ShadowLearner::new(
        ShadowMode::GlobalClifford { n_qubits: d.trailing_zeros() as usize },
        vec![HermitianOperator::outer(psi)],
        cfg.groups,
    )?;
    let threshold = 1.0 - cfg.epsilon / 5.0;
    let runs = run_trials(master, stream, cfg.trials, |_, rng| -> Result<(bool, f64)> {
        let l = rng.random_range(cfg.k + 1..=cfg.k + n / 2);
        let mut cond = Conditioner::new(state);
        let mut overlaps = Vec::with_capacity(cfg.k);
        for t in 0..l {
            let (basis, povm) = learner.draw(rng)?;
            let x = cond.measure(t, &povm, rng)?;
            if t < cfg.k {
                let DrawnBasis::Global(b) = &basis else { unreachable!("global Clifford mode") };
                overlaps.push(global_snapshot_overlap(b, x, psi));
            }
        }
        let accept = median_of_means(&overlaps, cfg.groups)?.estimate >= threshold;
        let infidelity = 1.0 - cond.reduced(n - 1)?.fidelity_with_pure(psi)?;
        Ok((accept, if accept { infidelity } else { 0.0 }))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let accepted = runs.iter().filter(|r| r.0).count();
    let weighted: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let (soundness, se) = mean_and_stderr(&weighted);
    Ok(VerificationExpectation {
        acceptance: accepted as f64 / cfg.trials as f64,
        acceptance_ci: wilson_interval(accepted, cfg.trials),
        soundness,
        soundness_halfwidth: Z95 * se,
        trials: cfg.trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ket;
    use crate::measurements::apply_channel;
    use crate::rng::trial_rng;
    use crate::states::{basis_mixture, iid_state, random_mixed_state};

    fn plus() -> CVector {
        (ket(2, 0) + ket(2, 1)).unscale(2f64.sqrt())
    }

    #[test]
    fn exact_inversion_reproduces_state() {
        let mut rng = trial_rng(1, "inversion", 0);
        for _ in 0..20 {
            let rho = random_mixed_state(2, &mut rng);
            let probs = apply_channel(&pauli6_povm(), &rho).unwrap();
            let back = project_to_density(&pauli6_linear_inversion(&probs)).unwrap();
            assert!(back.op().max_abs_diff(rho.op()) < 1e-10);
        }
    }

    #[test]
    fn simplex_projection_examples() {
        assert_eq!(project_to_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_to_simplex(&[1.5, -0.5]), vec![1.0, 0.0]);
        let p = project_to_simplex(&[0.2, 0.2, 0.2]);
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn tomography_error_shrinks_like_inverse_sqrt() {
        let target = DensityMatrix::pure(&plus()).unwrap();
        let median_error = |k: usize, stream: &str| {
            let alg = tomography_algorithm(k, 0.1).unwrap();
            let mut errs: Vec<f64> = run_trials(5, stream, 2000, |_, rng| {
                let Prediction::StateDescription(hat) = alg.run_iid(&target, rng).unwrap() else { unreachable!() };
                (hat.op() - target.op()).trace_norm()
            });
            errs.sort_by(f64::total_cmp);
            errs[errs.len() / 2]
        };
        let ratio = median_error(100, "tomo-100") / median_error(400, "tomo-400");
        assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn tomography_follows_the_branch() {
        let state = basis_mixture(2, 1200).unwrap();
        let alg = tomography_algorithm(60, 0.01).unwrap();
        let hits = run_trials(6, "tomo-branch", 400, |_, rng| {
            let rec = algorithm1_run(&state, &alg, rng).unwrap();
            let Prediction::StateDescription(hat) = rec.p else { return false };
            let branch = &rec.conditional_test_state;
            hat.trace_distance(branch) < hat.trace_distance(&DensityMatrix::maximally_mixed(2))
        });
        let rate = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
        assert!(rate >= 0.95, "rate {rate}");
    }

    #[test]
    fn mixedness_decisions() {
        let alg = mixedness_algorithm(400, 0.1, 0.2).unwrap();
        let run = |sigma: DensityMatrix, stream: &str| -> f64 {
            let ones = run_trials(7, stream, 500, |_, rng| alg.run_iid(&sigma, rng).unwrap() == Prediction::Bit(true));
            ones.iter().filter(|&&b| b).count() as f64 / ones.len() as f64
        };
        assert!(run(DensityMatrix::maximally_mixed(2), "mixed") <= 0.1);
        assert!(run(DensityMatrix::basis_state(2, 0), "pure") >= 0.9);
    }

    #[test]
    fn dfe_law_for_computational_zero() {
        let law = dfe_sampling_law(&ket(2, 0)).unwrap();
        let labels: Vec<String> = law.iter().map(|t| t.pauli.label()).collect();
        assert_eq!(labels, vec!["I", "Z"]);
        assert!(law.iter().all(|t| (t.probability - 0.5).abs() < 1e-12));
    }

    #[test]
    fn dfe_counts() {
        assert_eq!(dfe_num_paulis(0.2, 1.0 / 6.0), 150);
        assert_eq!(dfe_repetitions(1.0, 1.0 / 6.0), 1);
        assert_eq!(dfe_repetitions(0.5, 0.1), ((2.0 * 20f64.ln() * 0.1 / 0.25) as f64).ceil() as usize);
    }

    #[test]
    fn dfe_is_exact_on_stabilizer_targets() {
        for psi in [ket(2, 0), plus()] {
            let alg = fidelity_algorithm(&psi, 0.2, 1.0 / 6.0, 0.1).unwrap();
            let sigma = DensityMatrix::pure(&psi).unwrap();
            let mut rng = trial_rng(8, "dfe-exact", 0);
            let Prediction::Scalar(s) = alg.run_iid(&sigma, &mut rng).unwrap() else { unreachable!() };
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dfe_is_unbiased() {
        let mut rng = trial_rng(9, "dfe-rho", 0);
        let rho = random_mixed_state(2, &mut rng);
        let psi = ket(2, 0);
        let truth = rho.fidelity_with_pure(&psi).unwrap();
        let alg = fidelity_algorithm(&psi, 1.0, 0.5, 0.1).unwrap();
        let s: Vec<f64> = run_trials(9, "dfe-unbiased", 20000, |_, rng| {
            let Prediction::Scalar(s) = alg.run_iid(&rho, rng).unwrap() else { unreachable!() };
            s
        });
        let (m, se) = mean_and_stderr(&s);
        assert!((m - truth).abs() <= 3.0 * se + 1e-12, "{m} vs {truth} ± {se}");
    }

    #[test]
    fn shadow_estimates_are_unbiased_locally_and_globally() {
        let mut rng = trial_rng(10, "shadow-alg", 0);
        let rho = random_mixed_state(4, &mut rng);
        let obs = vec![HermitianOperator::outer(&ket(4, 0)), HermitianOperator::outer(&ket(4, 3))];
        for mode in [ShadowMode::GlobalClifford { n_qubits: 2 }, ShadowMode::LocalPauli { n_qubits: 2 }] {
            let learner = ShadowLearner::new(mode, obs.clone(), 1).unwrap();
            let alg = shadow_tomography_algorithm(&learner, 2000, 0.1).unwrap();
            let Prediction::ExpectationTuple(mu) = alg.run_iid(&rho, &mut rng).unwrap() else { unreachable!() };
            for (m, o) in mu.iter().zip(&obs) {
                assert!((m - o.expectation(rho.op())).abs() < 0.15, "{mode:?}: {m}");
            }
        }
    }

    #[test]
    fn verification_accepts_target_and_rejects_orthogonal() {
        let alg = verify_pure_algorithm(&[ket(2, 0)], 0.2, ShadowMode::GlobalClifford { n_qubits: 1 }, 200, 1, 0.1)
            .unwrap();
        let rate = |sigma: DensityMatrix, stream: &str| {
            let acc = run_trials(11, stream, 300, |_, rng| alg.run_iid(&sigma, rng).unwrap() == Prediction::Bit(false));
            acc.iter().filter(|&&a| a).count() as f64 / acc.len() as f64
        };
        assert!(rate(DensityMatrix::basis_state(2, 0), "target") >= 0.9);
        assert!(rate(DensityMatrix::basis_state(2, 1), "orthogonal") <= 0.01);
    }

    #[test]
    fn expectation_experiment_on_target_and_orthogonal_inputs() {
        let cfg = VerificationExpectationConfig { epsilon: 0.25, k: 150, groups: 1, trials: 200 };
        let good = iid_state(&DensityMatrix::basis_state(2, 0), 302);
        let r = verification_expectation(&good, &ket(2, 0), &cfg, 12, "ve-good").unwrap();
        assert!(r.acceptance >= 0.75 && r.soundness < 1e-12);
        let bad = iid_state(&DensityMatrix::basis_state(2, 1), 302);
        let r = verification_expectation(&bad, &ket(2, 0), &cfg, 12, "ve-bad").unwrap();
        assert!(r.acceptance <= 0.01);
    }

    #[test]
    fn asymptotic_parameters_grow_as_expected() {
        let (groups, k) = verification_expectation_parameters(0.25);
        assert_eq!(groups, 3);
        assert!(k > 10_000);
    }
}
