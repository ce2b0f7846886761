//! Dense complex linear algebra for Hermitian operators.
//!
//! Site ordering follows the Kronecker convention: site 0 is the most
//! significant index, so `a ⊗ b` has entry `(i_a·d_b + i_b, j_a·d_b + j_b)`.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const EIGEN_FLOOR: f64 = -1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const NORM_TOL: f64 = 1e-12;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Dense Hermitian matrix. Stored symmetrized, so exact Hermiticity holds.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator(CMatrix);

fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn symmetrize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

impl HermitianOperator {
    /// Validates squareness and Hermiticity (absolute tolerance 1e-12).
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        let defect = hermiticity_defect(&m);
        if defect > HERMITIAN_TOL {
            return Err(Error::NotHermitian(defect));
        }
        Ok(Self(symmetrize(&m)))
    }

    /// Symmetrizes without validating; for results Hermitian up to roundoff.
    pub(crate) fn from_symmetrized(m: CMatrix) -> Self {
        Self(symmetrize(&m))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self(CMatrix::from_fn(n, n, |i, j| if i == j { c(diag[i], 0.0) } else { C64::default() }))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim, dim))
    }

    /// `|psi⟩⟨psi|` without normalization checks.
    pub fn outer(psi: &CVector) -> Self {
        Self(psi * psi.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    /// `tr(self · other)`, real for Hermitian arguments.
    pub fn expectation(&self, other: &HermitianOperator) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let a = self.0[(i, j)];
                let b = other.0[(j, i)];
                acc += a.re * b.re - a.im * b.im;
            }
        }
        acc
    }

    pub fn max_abs_diff(&self, other: &HermitianOperator) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn tensor(&self, other: &HermitianOperator) -> HermitianOperator {
        tensor(self, other)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(self)
    }

    pub fn trace_norm(&self) -> f64 {
        trace_norm(self)
    }

    /// Unitary conjugation `U · self · U†`.
    pub fn conjugate_by(&self, u: &CMatrix) -> HermitianOperator {
        Self::from_symmetrized(u * &self.0 * u.adjoint())
    }
}

impl Add for &HermitianOperator {
    type Output = HermitianOperator;
    fn add(self, rhs: &HermitianOperator) -> HermitianOperator {
        HermitianOperator(&self.0 + &rhs.0)
    }
}

impl Sub for &HermitianOperator {
    type Output = HermitianOperator;
    fn sub(self, rhs: &HermitianOperator) -> HermitianOperator {
        HermitianOperator(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &HermitianOperator {
    type Output = HermitianOperator;
    fn mul(self, rhs: f64) -> HermitianOperator {
        self.scale(rhs)
    }
}

/// Quantum state: Hermitian, unit trace, eigenvalues ≥ −1e-10.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(HermitianOperator);

impl DensityMatrix {
    pub fn new(op: HermitianOperator) -> Result<Self> {
        let tr = op.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::BadTrace(tr));
        }
        let min = op.eigenvalues().first().copied().unwrap_or(0.0);
        if min < EIGEN_FLOOR {
            return Err(Error::NotPsd(min));
        }
        Ok(Self(op))
    }

    pub fn from_matrix(m: CMatrix) -> Result<Self> {
        Self::new(HermitianOperator::new(m)?)
    }

    /// Caller guarantees positivity; the trace is renormalized to 1.
    pub(crate) fn from_psd_unnormalized(op: HermitianOperator) -> Self {
        let tr = op.trace();
        Self(op.scale(1.0 / tr))
    }

    pub fn pure(psi: &CVector) -> Result<Self> {
        check_normalized(psi)?;
        Ok(Self(HermitianOperator::outer(psi)))
    }

    pub fn basis_state(d: usize, i: usize) -> Self {
        let mut diag = vec![0.0; d];
        diag[i] = 1.0;
        Self(HermitianOperator::from_real_diagonal(&diag))
    }

    pub fn maximally_mixed(d: usize) -> Self {
        Self(HermitianOperator::identity(d).scale(1.0 / d as f64))
    }

    pub fn from_diagonal(p: &[f64]) -> Result<Self> {
        Self::new(HermitianOperator::from_real_diagonal(p))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn op(&self) -> &HermitianOperator {
        &self.0
    }

    pub fn into_op(self) -> HermitianOperator {
        self.0
    }

    pub fn matrix(&self) -> &CMatrix {
        self.0.matrix()
    }

    pub fn tensor(&self, other: &DensityMatrix) -> DensityMatrix {
        DensityMatrix(tensor(&self.0, &other.0))
    }

    pub fn fidelity_with_pure(&self, psi: &CVector) -> Result<f64> {
        fidelity_with_pure(psi, self)
    }

    /// `½‖self − other‖₁`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        0.5 * trace_norm(&(&self.0 - &other.0))
    }

    /// Convex combination `α·self + (1−α)·other`.
    pub fn mix(&self, other: &DensityMatrix, alpha: f64) -> DensityMatrix {
        DensityMatrix(&self.0.scale(alpha) + &other.0.scale(1.0 - alpha))
    }

    pub fn conjugate_by(&self, u: &CMatrix) -> DensityMatrix {
        DensityMatrix(self.0.conjugate_by(u))
    }
}

/// Local dimensions of a composite system.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsystemDims(Vec<usize>);

impl SubsystemDims {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter(format!("subsystem dims must be positive: {dims:?}")));
        }
        Ok(Self(dims))
    }

    pub fn uniform(d: usize, n: usize) -> Self {
        Self(vec![d; n])
    }

    pub fn total(&self) -> usize {
        self.0.iter().product()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.total() != dim {
            return Err(Error::DimensionMismatch { expected: self.total(), got: dim });
        }
        Ok(())
    }

    fn check_sites(&self, sites: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for &s in sites {
            if s >= self.len() {
                return Err(Error::SiteOutOfRange { site: s, n_sites: self.len() });
            }
            if seen[s] {
                return Err(Error::InvalidParameter(format!("site {s} listed twice")));
            }
            seen[s] = true;
        }
        Ok(())
    }

    /// For each full index: (index over `sites` in listed order, index over the remaining sites ascending).
    fn split(&self, sites: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let n = self.len();
        let total = self.total();
        let mut strides = vec![1usize; n];
        for s in (0..n.saturating_sub(1)).rev() {
            strides[s] = strides[s + 1] * self.0[s + 1];
        }
        let rest: Vec<usize> = (0..n).filter(|s| !sites.contains(s)).collect();
        let mut sel_idx = vec![0usize; total];
        let mut rest_idx = vec![0usize; total];
        for full in 0..total {
            let digit = |s: usize| (full / strides[s]) % self.0[s];
            sel_idx[full] = sites.iter().fold(0, |acc, &s| acc * self.0[s] + digit(s));
            rest_idx[full] = rest.iter().fold(0, |acc, &s| acc * self.0[s] + digit(s));
        }
        (sel_idx, rest_idx)
    }
}

pub fn tensor(a: &HermitianOperator, b: &HermitianOperator) -> HermitianOperator {
    HermitianOperator(a.0.kronecker(&b.0))
}

pub fn tensor_all<'a, I: IntoIterator<Item = &'a HermitianOperator>>(ops: I) -> HermitianOperator {
    let mut iter = ops.into_iter();
    let first = iter.next().cloned().unwrap_or_else(|| HermitianOperator::identity(1));
    iter.fold(first, |acc, op| tensor(&acc, op))
}

/// Traces out every site not in `keep`; kept sites retain ascending order.
pub fn partial_trace(m: &HermitianOperator, dims: &SubsystemDims, keep: &[usize]) -> Result<HermitianOperator> {
    dims.check(m.dim())?;
    dims.check_sites(keep)?;
    let mut keep: Vec<usize> = keep.to_vec();
    keep.sort_unstable();
    let (kept, traced) = dims.split(&keep);
    let kept_dim: usize = keep.iter().map(|&s| dims.0[s]).product();
    let traced_dim = m.dim() / kept_dim;
    let mut groups: Vec<Vec<(usize, usize)>> = vec![Vec::with_capacity(kept_dim); traced_dim];
    for full in 0..m.dim() {
        groups[traced[full]].push((full, kept[full]));
    }
    let mut out = CMatrix::zeros(kept_dim, kept_dim);
    for group in &groups {
        for &(i, ki) in group {
            for &(j, kj) in group {
                out[(ki, kj)] += m.0[(i, j)];
            }
        }
    }
    Ok(HermitianOperator::from_symmetrized(out))
}

/// `tr_S[(E_S ⊗ I) m]` for an operator `e` on `sites` (listed order); the result lives on the
/// remaining sites in ascending order.
pub fn contract_sites(
    m: &HermitianOperator,
    dims: &SubsystemDims,
    sites: &[usize],
    e: &HermitianOperator,
) -> Result<HermitianOperator> {
    dims.check(m.dim())?;
    dims.check_sites(sites)?;
    let sel_dim: usize = sites.iter().map(|&s| dims.0[s]).product();
    if e.dim() != sel_dim {
        return Err(Error::DimensionMismatch { expected: sel_dim, got: e.dim() });
    }
    let rest_dim = m.dim() / sel_dim;
    let (sel, rest) = dims.split(sites);
    let mut full_of = vec![0usize; m.dim()];
    for full in 0..m.dim() {
        full_of[sel[full] * rest_dim + rest[full]] = full;
    }
    let mut out = CMatrix::zeros(rest_dim, rest_dim);
    for a in 0..sel_dim {
        for b in 0..sel_dim {
            let coef = e.0[(b, a)];
            if coef == C64::default() {
                continue;
            }
            for ri in 0..rest_dim {
                let row = full_of[a * rest_dim + ri];
                for rj in 0..rest_dim {
                    let col = full_of[b * rest_dim + rj];
                    out[(ri, rj)] += coef * m.0[(row, col)];
                }
            }
        }
    }
    Ok(HermitianOperator::from_symmetrized(out))
}

/// Ascending eigenvalues and matching eigenvectors (columns).
pub fn hermitian_eigh(m: &HermitianOperator) -> (Vec<f64>, CMatrix) {
    let eig = m.0.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m.dim()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(m.dim(), m.dim(), |r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

pub fn hermitian_eigenvalues(m: &HermitianOperator) -> Vec<f64> {
    match m.dim() {
        1 => vec![m.0[(0, 0)].re],
        2 => {
            let (a, d, b) = (m.0[(0, 0)].re, m.0[(1, 1)].re, m.0[(0, 1)]);
            let mid = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
            vec![mid - rad, mid + rad]
        }
        _ => {
            let mut v: Vec<f64> = m.0.clone().symmetric_eigenvalues().iter().copied().collect();
            v.sort_by(f64::total_cmp);
            v
        }
    }
}

pub fn trace_norm(m: &HermitianOperator) -> f64 {
    hermitian_eigenvalues(m).iter().map(|x| x.abs()).sum()
}

/// `⟨psi|rho|psi⟩`; rejects unnormalized vectors.
pub fn fidelity_with_pure(psi: &CVector, rho: &DensityMatrix) -> Result<f64> {
    check_normalized(psi)?;
    if psi.len() != rho.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), got: psi.len() });
    }
    let v = (psi.adjoint() * rho.matrix() * psi)[(0, 0)];
    Ok(v.re.clamp(0.0, 1.0))
}

pub fn check_normalized(psi: &CVector) -> Result<()> {
    let norm = psi.norm();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::NotNormalized(norm));
    }
    Ok(())
}

/// Computational basis vector `|i⟩` in dimension `d`.
pub fn ket(d: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(d);
    v[i] = c(1.0, 0.0);
    v
}

pub fn is_unitary(u: &CMatrix, tol: f64) -> bool {
    let prod = u.adjoint() * u;
    let id = CMatrix::identity(u.nrows(), u.ncols());
    (prod - id).iter().all(|z| z.norm() <= tol)
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)])
}

pub fn hadamard() -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_row_slice(2, 2, &[c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)])
}

pub fn phase_s() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 1.0)])
}
