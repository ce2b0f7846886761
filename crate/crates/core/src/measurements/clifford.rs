//! Clifford unitaries: exhaustive generation for one and two qubits and
//! uniform sampling through a random stabilizer tableau for up to three.

use std::collections::{HashMap, VecDeque};
use std::sync::OnceLock;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{c, hadamard, phase_s, CMatrix, CVector, C64};

pub const MAX_CLIFFORD_QUBITS: usize = 3;

/// Multiplies `u` by the phase that makes the first nonzero entry of column 0 positive real.
pub fn phase_normalize(u: &CMatrix) -> CMatrix {
    let pivot = (0..u.nrows()).map(|i| u[(i, 0)]).find(|z| z.norm() > 1e-9);
    match pivot {
        Some(z) => u * (z.conj() / z.norm()),
        None => u.clone(),
    }
}

fn phase_key(u: &CMatrix) -> Vec<i64> {
    u.iter().flat_map(|z| [(z.re * 1e7).round() as i64, (z.im * 1e7).round() as i64]).collect()
}

/// Closure of `generators` under multiplication, modulo global phase.
fn generate_group(generators: &[CMatrix]) -> Vec<CMatrix> {
    let dim = generators[0].nrows();
    let id = CMatrix::identity(dim, dim);
    let mut seen: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut elements = vec![id.clone()];
    seen.insert(phase_key(&id), 0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(idx) = queue.pop_front() {
        for g in generators {
            let next = phase_normalize(&(g * &elements[idx]));
            let key = phase_key(&next);
            if !seen.contains_key(&key) {
                seen.insert(key, elements.len());
                queue.push_back(elements.len());
                elements.push(next);
            }
        }
    }
    elements
}

/// The 24 single-qubit Cliffords (phase-normalized), generated by H and S.
pub fn single_qubit_cliffords() -> &'static [CMatrix] {
    static CELL: OnceLock<Vec<CMatrix>> = OnceLock::new();
    CELL.get_or_init(|| generate_group(&[hadamard(), phase_s()]))
}

/// All 11520 two-qubit Cliffords modulo phase, generated by local H, S and CNOT.
pub fn two_qubit_cliffords() -> &'static [CMatrix] {
    static CELL: OnceLock<Vec<CMatrix>> = OnceLock::new();
    CELL.get_or_init(|| {
        let id = CMatrix::identity(2, 2);
        let mut cnot = CMatrix::zeros(4, 4);
        for (r, col) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
            cnot[(r, col)] = c(1.0, 0.0);
        }
        generate_group(&[
            hadamard().kronecker(&id),
            id.kronecker(&hadamard()),
            phase_s().kronecker(&id),
            id.kronecker(&phase_s()),
            cnot,
        ])
    })
}

/// Index of `u` in `group` modulo global phase.
pub fn class_index(group: &[CMatrix], u: &CMatrix) -> Option<usize> {
    let key = phase_key(&phase_normalize(u));
    group.iter().position(|g| phase_key(g) == key)
}

/// Symplectic vector of an n-qubit Pauli; bit `n-1-j` encodes qubit j (qubit 0 most significant).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct PauliBits {
    x: u32,
    z: u32,
}

impl PauliBits {
    fn from_index(idx: u32, n: usize) -> Self {
        Self { x: idx >> n, z: idx & ((1 << n) - 1) }
    }

    fn anticommutes(self, o: PauliBits) -> bool {
        ((self.x & o.z).count_ones() + (self.z & o.x).count_ones()) % 2 == 1
    }

    /// Dense Hermitian Pauli `i^{x·z} X^x Z^z` scaled by `sign`.
    fn matrix(self, n: usize, sign: f64) -> CMatrix {
        let dim = 1usize << n;
        let phase = match (self.x & self.z).count_ones() % 4 {
            0 => c(1.0, 0.0),
            1 => c(0.0, 1.0),
            2 => c(-1.0, 0.0),
            _ => c(0.0, -1.0),
        } * sign;
        // X^x Z^z |b⟩ = (-1)^{z·b} |b ⊕ x⟩
        let mut m = CMatrix::zeros(dim, dim);
        for b in 0..dim as u32 {
            let s = if (self.z & b).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
            m[((b ^ self.x) as usize, b as usize)] = phase * s;
        }
        m
    }
}

/// Uniform n-qubit Clifford (n ≤ 3) as a phase-normalized dense unitary.
///
/// Images of X_j and Z_j are drawn by symplectic Gram–Schmidt with uniform
/// choices at every step (stage counts do not depend on earlier picks), and
/// independent uniform signs; the unitary is then synthesized column by column
/// from the stabilizer state U|0…0⟩.
pub fn random_clifford_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<CMatrix> {
    if n == 0 || n > MAX_CLIFFORD_QUBITS {
        return Err(Error::Capacity(format!("random Clifford supports 1..={MAX_CLIFFORD_QUBITS} qubits, got {n}")));
    }
    let all: Vec<PauliBits> = (1..(1u32 << (2 * n))).map(|i| PauliBits::from_index(i, n)).collect();
    let mut chosen: Vec<PauliBits> = Vec::with_capacity(2 * n);
    let mut x_images = Vec::with_capacity(n);
    let mut z_images = Vec::with_capacity(n);
    for _ in 0..n {
        let free: Vec<PauliBits> =
            all.iter().copied().filter(|v| chosen.iter().all(|w| !v.anticommutes(*w))).collect();
        let p = free[rng.random_range(0..free.len())];
        let partners: Vec<PauliBits> = free.iter().copied().filter(|v| v.anticommutes(p)).collect();
        let q = partners[rng.random_range(0..partners.len())];
        chosen.push(p);
        chosen.push(q);
        x_images.push(p.matrix(n, if rng.random::<bool>() { 1.0 } else { -1.0 }));
        z_images.push(q.matrix(n, if rng.random::<bool>() { 1.0 } else { -1.0 }));
    }
    let dim = 1usize << n;
    let id = CMatrix::identity(dim, dim);
    let projector = z_images.iter().fold(id.clone(), |acc, q| acc * (&id + q).scale(0.5));
    let col = (0..dim)
        .max_by(|&a, &b| projector.column(a).norm().total_cmp(&projector.column(b).norm()))
        .expect("nonempty");
    let phi: CVector = projector.column(col).into_owned();
    let phi = phi.unscale(phi.norm());
    let mut u = CMatrix::zeros(dim, dim);
    for x in 0..dim {
        let mut v = phi.clone();
        for (j, p) in x_images.iter().enumerate() {
            if (x >> (n - 1 - j)) & 1 == 1 {
                v = p * v;
            }
        }
        u.set_column(x, &v);
    }
    Ok(phase_normalize(&u))
}

/// Checks that `u P u†` is a signed Pauli for every single-site X and Z generator.
pub fn maps_paulis_to_paulis(u: &CMatrix, n: usize, tol: f64) -> bool {
    let paulis: Vec<CMatrix> = (0..(1u32 << (2 * n)))
        .map(|i| PauliBits::from_index(i, n).matrix(n, 1.0))
        .collect();
    let generators = (0..n).flat_map(|j| {
        let bit = 1u32 << (n - 1 - j);
        [PauliBits { x: bit, z: 0 }, PauliBits { x: 0, z: bit }]
    });
    generators.into_iter().all(|g| {
        let image = u * g.matrix(n, 1.0) * u.adjoint();
        paulis.iter().any(|p| {
            [c(1.0, 0.0), c(-1.0, 0.0)]
                .iter()
                .any(|s| (&image - p * *s).iter().all(|z: &C64| z.norm() <= tol))
        })
    })
}
