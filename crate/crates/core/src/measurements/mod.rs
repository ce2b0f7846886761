//! POVMs, basis measurements, measurement families and the informationally
//! complete six-outcome Pauli POVM used as the low-distortion device.

pub mod clifford;

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    hadamard, hermitian_eigenvalues, is_unitary, phase_s, trace_norm, CMatrix, DensityMatrix,
    HermitianOperator,
};
use crate::states::{ConditionResult, MultipartiteState};

pub use clifford::{random_clifford_unitary, single_qubit_cliffords, two_qubit_cliffords};

/// Real coordinates of a Hermitian matrix such that `tr(A·B) = ⟨coords(A), state_coords(B)⟩`
/// when `A` uses `effect_coords` (off-diagonal weight 2) and `B` uses `state_coords`.
pub(crate) fn hermitian_coords(op: &HermitianOperator, off_weight: f64, out: &mut Vec<f64>) {
    let m = op.matrix();
    let d = op.dim();
    for i in 0..d {
        out.push(m[(i, i)].re);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            out.push(off_weight * m[(i, j)].re);
            out.push(off_weight * m[(i, j)].im);
        }
    }
}

/// Inverse of `hermitian_coords` with off-diagonal weight 1.
pub(crate) fn operator_from_state_coords(d: usize, coords: &[f64]) -> HermitianOperator {
    let mut m = CMatrix::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = crate::linalg::c(coords[i], 0.0);
    }
    let mut k = d;
    for i in 0..d {
        for j in (i + 1)..d {
            let z = crate::linalg::c(coords[k], coords[k + 1]);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
            k += 2;
        }
    }
    HermitianOperator::from_symmetrized(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PovmDiagnostics {
    pub min_eigenvalue: f64,
    pub completeness_deviation: f64,
    pub dimension_consistent: bool,
}

impl PovmDiagnostics {
    pub fn ok(&self) -> bool {
        self.dimension_consistent && self.min_eigenvalue >= -1e-10 && self.completeness_deviation <= 1e-10
    }
}

/// Reports positivity and completeness defects of a candidate effect list; never fails.
pub fn validate_povm(elements: &[HermitianOperator]) -> PovmDiagnostics {
    let Some(first) = elements.first() else {
        return PovmDiagnostics { min_eigenvalue: 0.0, completeness_deviation: f64::INFINITY, dimension_consistent: false };
    };
    let d = first.dim();
    if elements.iter().any(|e| e.dim() != d) {
        return PovmDiagnostics { min_eigenvalue: f64::NAN, completeness_deviation: f64::INFINITY, dimension_consistent: false };
    }
    let min_eigenvalue = elements
        .iter()
        .map(|e| hermitian_eigenvalues(e)[0])
        .fold(f64::INFINITY, f64::min);
    let sum = elements.iter().fold(HermitianOperator::zeros(d), |acc, e| &acc + e);
    let completeness_deviation = sum.max_abs_diff(&HermitianOperator::identity(d));
    PovmDiagnostics { min_eigenvalue, completeness_deviation, dimension_consistent: true }
}

/// Finite-outcome POVM with cached real coordinates of its effects.
#[derive(Clone, Debug)]
pub struct Povm {
    elements: Vec<HermitianOperator>,
    labels: Option<Arc<Vec<String>>>,
    coords: Vec<f64>,
}

impl PartialEq for Povm {
    fn eq(&self, other: &Self) -> bool {
        self.elements == other.elements && self.labels() == other.labels()
    }
}

impl Povm {
    pub fn new(elements: Vec<HermitianOperator>, labels: Option<Vec<String>>) -> Result<Self> {
        let diag = validate_povm(&elements);
        if !diag.ok() {
            return Err(Error::InvalidPovm(format!(
                "min eigenvalue {:.3e}, completeness deviation {:.3e}",
                diag.min_eigenvalue, diag.completeness_deviation
            )));
        }
        if let Some(l) = &labels {
            if l.len() != elements.len() {
                return Err(Error::DimensionMismatch { expected: elements.len(), got: l.len() });
            }
        }
        Ok(Self::assemble(elements, labels.map(Arc::new)))
    }

    fn assemble(elements: Vec<HermitianOperator>, labels: Option<Arc<Vec<String>>>) -> Self {
        let mut coords = Vec::with_capacity(elements.len() * elements[0].dim().pow(2));
        for e in &elements {
            hermitian_coords(e, 2.0, &mut coords);
        }
        Self { elements, labels, coords }
    }

    pub fn dim(&self) -> usize {
        self.elements[0].dim()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[HermitianOperator] {
        &self.elements
    }

    pub fn element(&self, x: usize) -> &HermitianOperator {
        &self.elements[x]
    }

    pub fn label(&self, x: usize) -> String {
        match &self.labels {
            Some(l) => l[x].clone(),
            None => x.to_string(),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.len()).map(|x| self.label(x)).collect()
    }

    /// Coordinates of effect `x`, paired with `MultipartiteState` factor coordinates.
    pub(crate) fn effect_coords(&self, x: usize) -> &[f64] {
        let dd = self.dim() * self.dim();
        &self.coords[x * dd..(x + 1) * dd]
    }

    pub fn computational(d: usize) -> Self {
        let elements = (0..d)
            .map(|i| HermitianOperator::from_real_diagonal(&(0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect::<Vec<_>>()))
            .collect();
        Self::assemble(elements, None)
    }

    pub fn trivial(d: usize) -> Self {
        Self::assemble(vec![HermitianOperator::identity(d)], None)
    }

    /// Probability vector `(tr(M_x ρ))_x`.
    pub fn probabilities(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        apply_channel(self, rho)
    }
}

/// Measurement in the rotated basis `{U†|v⟩⟨v|U}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisMeasurement {
    unitary: CMatrix,
}

impl BasisMeasurement {
    pub fn new(unitary: CMatrix) -> Result<Self> {
        if unitary.nrows() != unitary.ncols() {
            return Err(Error::NotSquare { rows: unitary.nrows(), cols: unitary.ncols() });
        }
        if !is_unitary(&unitary, 1e-10) {
            return Err(Error::InvalidParameter("basis measurement requires a unitary".into()));
        }
        Ok(Self { unitary })
    }

    pub fn unitary(&self) -> &CMatrix {
        &self.unitary
    }

    pub fn dim(&self) -> usize {
        self.unitary.nrows()
    }

    /// The projector `U†|v⟩⟨v|U`.
    pub fn projector(&self, v: usize) -> HermitianOperator {
        let row = self.unitary.row(v).adjoint();
        HermitianOperator::outer(&row)
    }

    pub fn povm(&self) -> Povm {
        Povm::assemble((0..self.dim()).map(|v| self.projector(v)).collect(), None)
    }
}

/// Indexed POVM family with a sampling law, or the uniform n-qubit Clifford law.
#[derive(Clone, Debug)]
pub struct MeasurementFamily {
    id: String,
    kind: FamilyKind,
}

#[derive(Clone, Debug)]
enum FamilyKind {
    Finite { povms: Vec<Arc<Povm>>, law: Vec<f64>, sampler: WeightedIndex<f64> },
    RandomClifford { n_qubits: usize },
}

impl MeasurementFamily {
    pub fn finite(id: impl Into<String>, povms: Vec<Povm>, law: Option<Vec<f64>>) -> Result<Self> {
        if povms.is_empty() {
            return Err(Error::Empty);
        }
        let law = law.unwrap_or_else(|| vec![1.0 / povms.len() as f64; povms.len()]);
        if law.len() != povms.len() || law.iter().any(|&q| q < 0.0) || (law.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter("sampling law must be a probability vector over the POVMs".into()));
        }
        let sampler = WeightedIndex::new(&law).map_err(|e| Error::DegenerateLaw(e.to_string()))?;
        Ok(Self { id: id.into(), kind: FamilyKind::Finite { povms: povms.into_iter().map(Arc::new).collect(), law, sampler } })
    }

    pub fn computational(d: usize) -> Self {
        Self::finite("computational", vec![Povm::computational(d)], None).expect("valid family")
    }

    /// Z, X and Y bases with equal weight.
    pub fn pauli3() -> Self {
        let bases = pauli_basis_unitaries();
        Self::finite("pauli3", bases.iter().map(|u| BasisMeasurement { unitary: u.clone() }.povm()).collect(), None)
            .expect("valid family")
    }

    /// The 24 single-qubit Clifford bases with equal weight.
    pub fn clifford1() -> Self {
        let povms = single_qubit_cliffords().iter().map(|u| BasisMeasurement { unitary: u.clone() }.povm()).collect();
        Self::finite("clifford1", povms, None).expect("valid family")
    }

    pub fn clifford_n(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > clifford::MAX_CLIFFORD_QUBITS {
            return Err(Error::Capacity(format!("cliffordN supports up to {} qubits", clifford::MAX_CLIFFORD_QUBITS)));
        }
        Ok(Self { id: format!("clifford{n_qubits}q"), kind: FamilyKind::RandomClifford { n_qubits } })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            FamilyKind::Finite { povms, .. } => povms[0].dim(),
            FamilyKind::RandomClifford { n_qubits } => 1 << n_qubits,
        }
    }

    /// Explicit members and law, when the family is finite.
    pub fn members(&self) -> Option<(&[Arc<Povm>], &[f64])> {
        match &self.kind {
            FamilyKind::Finite { povms, law, .. } => Some((povms, law)),
            FamilyKind::RandomClifford { .. } => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Arc<Povm> {
        match &self.kind {
            FamilyKind::Finite { povms, sampler, .. } => povms[sampler.sample(rng)].clone(),
            FamilyKind::RandomClifford { n_qubits } => {
                let u = random_clifford_unitary(*n_qubits, rng).expect("qubit count validated");
                Arc::new(BasisMeasurement { unitary: u }.povm())
            }
        }
    }
}

/// Unitaries whose measurement bases are Z, X and Y, in that order.
pub fn pauli_basis_unitaries() -> [CMatrix; 3] {
    [CMatrix::identity(2, 2), hadamard(), hadamard() * phase_s().adjoint()]
}

pub fn apply_channel(p: &Povm, rho: &DensityMatrix) -> Result<Vec<f64>> {
    if p.dim() != rho.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: rho.dim() });
    }
    Ok(p.elements.iter().map(|e| e.expectation(rho.op())).collect())
}

/// `ℓ₁` norm of the classical image `(tr(M_x Δ))_x` of a Hermitian operator.
pub fn image_l1(p: &Povm, delta: &HermitianOperator) -> f64 {
    p.elements.iter().map(|e| e.expectation(delta).abs()).sum()
}

/// Draws an outcome at `site` from the joint state and returns the conditioned remainder.
pub fn sample_outcome<R: Rng + ?Sized>(
    p: &Povm,
    state: &MultipartiteState,
    site: usize,
    rng: &mut R,
) -> Result<(usize, ConditionResult)> {
    let probs = apply_channel(p, &state.reduced(site)?)?;
    let x = sample_index(&probs, rng);
    let cond = state.condition_on_outcome(site, p.element(x))?;
    Ok((x, cond))
}

/// Samples an index from nonnegative weights (need not be normalized).
pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        let w = w.max(0.0);
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Six-outcome Pauli POVM `(1/3)|b,±⟩⟨b,±|` ordered (Z+, Z−, X+, X−, Y+, Y−).
pub fn pauli6_povm() -> Povm {
    let mut elements = Vec::with_capacity(6);
    let mut labels = Vec::with_capacity(6);
    for (u, name) in pauli_basis_unitaries().iter().zip(["Z", "X", "Y"]) {
        let basis = BasisMeasurement { unitary: u.clone() };
        for (v, sign) in [(0, "+"), (1, "-")] {
            elements.push(basis.projector(v).scale(1.0 / 3.0));
            labels.push(format!("{name}{sign}"));
        }
    }
    Povm::assemble(elements, Some(Arc::new(labels)))
}

/// Rank of the real span of the effects (d² means informationally complete).
pub fn effect_span_rank(p: &Povm) -> usize {
    let dd = p.dim() * p.dim();
    let m = DMatrix::from_fn(dd, p.len(), |r, col| p.effect_coords(col)[r]);
    m.rank(1e-10)
}

pub fn is_informationally_complete(p: &Povm) -> bool {
    effect_span_rank(p) == p.dim() * p.dim()
}

/// Gram matrix `G_xy = tr(M_x M_y)`.
pub fn gram_matrix(p: &Povm) -> DMatrix<f64> {
    DMatrix::from_fn(p.len(), p.len(), |x, y| p.element(x).expectation(p.element(y)))
}

/// Largest observed ratio `‖ρ−σ‖₁ / ‖image(ρ−σ)‖₁` over random pure-state pairs.
pub fn distortion_lower_bound<R: Rng + ?Sized>(p: &Povm, trials: usize, rng: &mut R) -> Result<f64> {
    if !is_informationally_complete(p) {
        return Err(Error::NotInformationallyComplete(format!(
            "effect span has rank {} < {}",
            effect_span_rank(p),
            p.dim() * p.dim()
        )));
    }
    let d = p.dim();
    let mut best: f64 = 0.0;
    for _ in 0..trials {
        let a = crate::states::haar_pure_state(d, rng);
        let b = crate::states::haar_pure_state(d, rng);
        let delta = a.op() - b.op();
        let num = trace_norm(&delta);
        let den = image_l1(p, &delta);
        if den < 1e-12 {
            if num < 1e-12 {
                continue;
            }
            return Err(Error::NotInformationallyComplete(format!("image norm {den:.3e} for a nonzero difference")));
        }
        best = best.max(num / den);
    }
    Ok(best)
}

/// Product POVM with comma-joined labels; the first POVM is the most significant factor.
pub fn tensor_povm(ps: &[Povm]) -> Result<Povm> {
    let first = ps.first().ok_or(Error::Empty)?;
    let mut elements = first.elements.clone();
    let mut labels = first.labels();
    for p in &ps[1..] {
        let mut ne = Vec::with_capacity(elements.len() * p.len());
        let mut nl = Vec::with_capacity(elements.len() * p.len());
        for (a, la) in elements.iter().zip(&labels) {
            for x in 0..p.len() {
                ne.push(a.tensor(p.element(x)));
                nl.push(format!("{la},{}", p.label(x)));
            }
        }
        elements = ne;
        labels = nl;
    }
    Ok(Povm::assemble(elements, Some(Arc::new(labels))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, ket};
    use crate::rng::trial_rng;
    use crate::states::{basis_mixture, iid_state};

    #[test]
    fn validation_examples() {
        assert!(validate_povm(Povm::computational(2).elements()).ok());
        let half = HermitianOperator::identity(2).scale(0.5);
        assert!(validate_povm(&[half.clone(), half]).ok());
        let p0 = HermitianOperator::from_real_diagonal(&[1.0, 0.0]);
        let bad = validate_povm(&[p0.clone(), p0]);
        assert!(!bad.ok());
        assert!(bad.completeness_deviation > 0.9);
    }

    #[test]
    fn channel_examples() {
        let plus = DensityMatrix::pure(&(hadamard() * ket(2, 0))).unwrap();
        let pr = apply_channel(&Povm::computational(2), &plus).unwrap();
        assert!((pr[0] - 0.5).abs() < 1e-15 && (pr[1] - 0.5).abs() < 1e-15);
        let p6 = apply_channel(&pauli6_povm(), &DensityMatrix::basis_state(2, 0)).unwrap();
        let expected = [1.0 / 3.0, 0.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0];
        assert!(p6.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-15));
        let mixed = apply_channel(&pauli6_povm(), &DensityMatrix::maximally_mixed(2)).unwrap();
        assert!(mixed.iter().all(|x| (x - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn pauli6_labels_and_validity() {
        let p = pauli6_povm();
        assert!(validate_povm(p.elements()).ok());
        assert_eq!(p.labels(), vec!["Z+", "Z-", "X+", "X-", "Y+", "Y-"]);
    }

    #[test]
    fn pauli6_gram_rank_is_four() {
        let g = gram_matrix(&pauli6_povm());
        assert_eq!(g.rank(1e-10), 4);
        assert_eq!(effect_span_rank(&pauli6_povm()), 4);
    }

    #[test]
    fn computational_basis_is_flagged_as_not_ic() {
        let mut rng = trial_rng(0, "dist", 0);
        let r = distortion_lower_bound(&Povm::computational(2), 10, &mut rng);
        assert!(matches!(r, Err(Error::NotInformationallyComplete(_))));
    }

    #[test]
    fn pauli6_distortion_bounded_by_three() {
        let mut rng = trial_rng(0, "dist", 1);
        let est = distortion_lower_bound(&pauli6_povm(), 20_000, &mut rng).unwrap();
        assert!(est <= 3.0 + 1e-6 && est > 2.5, "{est}");
    }

    #[test]
    fn tensor_povm_examples() {
        let t = tensor_povm(&[Povm::computational(2), Povm::computational(2)]).unwrap();
        assert_eq!(t.len(), 4);
        assert!(validate_povm(t.elements()).completeness_deviation < 1e-9);
        assert_eq!(t.label(3), "1,1");
        let big = tensor_povm(&[pauli6_povm(), Povm::computational(2)]).unwrap();
        assert_eq!(big.len(), 12);
    }

    #[test]
    fn sample_outcome_deterministic_and_correlated() {
        let mut rng = trial_rng(0, "so", 0);
        let st = iid_state(&DensityMatrix::basis_state(2, 0), 3);
        for _ in 0..20 {
            let (x, _) = sample_outcome(&Povm::computational(2), &st, 0, &mut rng).unwrap();
            assert_eq!(x, 0);
        }
        let bm = basis_mixture(2, 4).unwrap();
        for _ in 0..20 {
            let (x, cond) = sample_outcome(&Povm::computational(2), &bm, 0, &mut rng).unwrap();
            let mut rest = cond.post_state;
            for _ in 0..2 {
                let (y, c2) = sample_outcome(&Povm::computational(2), &rest, 0, &mut rng).unwrap();
                assert_eq!(x, y);
                rest = c2.post_state;
            }
        }
    }

    #[test]
    fn sample_outcome_frequencies_match_channel() {
        let mut rng = trial_rng(0, "so", 1);
        let psi = crate::linalg::CVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let st = iid_state(&DensityMatrix::pure(&psi).unwrap(), 2);
        let p = pauli6_povm();
        let probs = apply_channel(&p, &st.reduced(0).unwrap()).unwrap();
        let n = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[sample_outcome(&p, &st, 1, &mut rng).unwrap().0] += 1;
        }
        for (cnt, pr) in counts.iter().zip(&probs) {
            let sigma = crate::stats::binomial_sigma(*pr, n);
            assert!((*cnt as f64 / n as f64 - pr).abs() <= 3.0 * sigma + 1e-12);
        }
    }

    #[test]
    fn basis_measurement_projectors() {
        let bm = BasisMeasurement::new(hadamard()).unwrap();
        let plus = HermitianOperator::outer(&(hadamard() * ket(2, 0)));
        assert!(bm.projector(0).max_abs_diff(&plus) < 1e-15);
        assert!(BasisMeasurement::new(CMatrix::from_element(2, 2, c(1.0, 0.0))).is_err());
    }

    #[test]
    fn pauli_basis_y_eigenstates() {
        let y = BasisMeasurement::new(pauli_basis_unitaries()[2].clone()).unwrap();
        let yop = HermitianOperator::new(crate::linalg::pauli_y()).unwrap();
        assert!((y.projector(0).expectation(&yop) - 1.0).abs() < 1e-14);
        assert!((y.projector(1).expectation(&yop) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn family_laws() {
        assert_eq!(MeasurementFamily::clifford1().members().unwrap().0.len(), 24);
        assert_eq!(MeasurementFamily::pauli3().members().unwrap().0.len(), 3);
        assert!(MeasurementFamily::finite("bad", vec![Povm::computational(2)], Some(vec![0.5])).is_err());
        let fam = MeasurementFamily::clifford_n(2).unwrap();
        let mut rng = trial_rng(0, "fam", 0);
        let p = fam.sample(&mut rng);
        assert_eq!(p.dim(), 4);
        assert!(validate_povm(p.elements()).ok());
    }

    #[test]
    fn channel_positivity_and_data_processing() {
        let mut rng = trial_rng(0, "dp", 0);
        let povms = [Povm::computational(2), pauli6_povm()];
        for _ in 0..200 {
            let rho = crate::states::random_mixed_state(2, &mut rng);
            let sigma = crate::states::random_mixed_state(2, &mut rng);
            let tn = trace_norm(&(rho.op() - sigma.op()));
            for p in &povms {
                let a = apply_channel(p, &rho).unwrap();
                let b = apply_channel(p, &sigma).unwrap();
                assert!(a.iter().all(|&x| x >= -1e-12));
                let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
                assert!(l1 <= tn + 1e-10);
            }
        }
    }

    #[test]
    fn pauli6_linear_inversion_reconstructs_states() {
        let mut rng = trial_rng(0, "inv", 0);
        for _ in 0..50 {
            let rho = crate::states::random_mixed_state(2, &mut rng);
            let probs = apply_channel(&pauli6_povm(), &rho).unwrap();
            let rec = crate::noniid::protocols::pauli6_linear_inversion(&probs);
            assert!(rec.max_abs_diff(rho.op()) < 1e-10);
        }
    }

    #[test]
    fn clifford_second_moment_matches_haar_twirl() {
        // Average of U⊗U (.) U†⊗U† applied to SWAP-free operator |00⟩⟨00| equals the Haar value (I + SWAP)/6.
        let zero2 = HermitianOperator::from_real_diagonal(&[1.0, 0.0, 0.0, 0.0]);
        let mut acc = CMatrix::zeros(4, 4);
        for u in single_qubit_cliffords() {
            let uu = u.kronecker(u);
            acc += &uu * zero2.matrix() * uu.adjoint();
        }
        acc /= c(24.0, 0.0);
        let mut swap = CMatrix::zeros(4, 4);
        for (r, col) in [(0, 0), (1, 2), (2, 1), (3, 3)] {
            swap[(r, col)] = c(1.0, 0.0);
        }
        let haar = (CMatrix::identity(4, 4) + swap) / c(6.0, 0.0);
        assert!((acc - haar).iter().all(|z| z.norm() < 1e-12));
    }
}
