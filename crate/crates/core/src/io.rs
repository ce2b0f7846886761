//! JSON documents for states and POVMs, and line-delimited snapshot records.
//!
//! Matrices are stored row-major as `[re, im]` pairs. Floats are written in the
//! shortest form that parses back to the identical `f64` (at most 17 significant
//! digits), so a document reloads bit-for-bit.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, CMatrix, DensityMatrix, HermitianOperator};
use crate::measurements::Povm;
use crate::shadows::ShadowSnapshot;
use crate::states::{MixtureBranch, MultipartiteState, Representation};

pub const STATE_FORMAT: &str = "noniid-qlearn/state";
pub const POVM_FORMAT: &str = "noniid-qlearn/povm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub dim: usize,
    /// Row-major `[re, im]` entries.
    pub entries: Vec<[f64; 2]>,
}

impl MatrixDoc {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let dim = m.nrows();
        let entries = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| [m[(i, j)].re, m[(i, j)].im]).collect();
        Self { dim, entries }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        if self.entries.len() != self.dim * self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim * self.dim, got: self.entries.len() });
        }
        Ok(CMatrix::from_row_iterator(self.dim, self.dim, self.entries.iter().map(|[re, im]| c(*re, *im))))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchDoc {
    pub weight: f64,
    pub factors: Vec<MatrixDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rep", rename_all = "snake_case")]
pub enum RepDoc {
    ProductMixture { branches: Vec<BranchDoc> },
    Dense { matrix: MatrixDoc },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDoc {
    pub format: String,
    pub site_dim: usize,
    pub n_sites: usize,
    #[serde(flatten)]
    pub rep: RepDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PovmDoc {
    pub format: String,
    pub dim: usize,
    pub labels: Vec<String>,
    pub elements: Vec<MatrixDoc>,
}

fn check_format(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::InvalidParameter(format!("document format {found:?}, expected {expected:?}")));
    }
    Ok(())
}

pub fn state_doc(state: &MultipartiteState) -> StateDoc {
    let rep = match state.representation() {
        Representation::Dense(rho) => RepDoc::Dense { matrix: MatrixDoc::from_matrix(rho.matrix()) },
        Representation::ProductMixture(branches) => RepDoc::ProductMixture {
            branches: branches
                .iter()
                .map(|b| BranchDoc {
                    weight: b.weight,
                    factors: b.factors.iter().map(|f| MatrixDoc::from_matrix(f.matrix())).collect(),
                })
                .collect(),
        },
    };
    StateDoc { format: STATE_FORMAT.into(), site_dim: state.site_dim(), n_sites: state.n_sites(), rep }
}

/// Rebuilds and revalidates a state; shared factors are not re-shared.
pub fn state_from_doc(doc: &StateDoc) -> Result<MultipartiteState> {
    check_format(&doc.format, STATE_FORMAT)?;
    let state = match &doc.rep {
        RepDoc::Dense { matrix } => {
            MultipartiteState::dense(DensityMatrix::from_matrix(matrix.to_matrix()?)?, doc.site_dim, doc.n_sites)?
        }
        RepDoc::ProductMixture { branches } => MultipartiteState::mixture(
            branches
                .iter()
                .map(|b| {
                    let factors = b
                        .factors
                        .iter()
                        .map(|f| Ok(Arc::new(DensityMatrix::from_matrix(f.to_matrix()?)?)))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(MixtureBranch { weight: b.weight, factors })
                })
                .collect::<Result<Vec<_>>>()?,
        )?,
    };
    if state.site_dim() != doc.site_dim || state.n_sites() != doc.n_sites {
        return Err(Error::InvalidParameter("declared site_dim / n_sites disagree with the payload".into()));
    }
    Ok(state)
}

pub fn state_to_json(state: &MultipartiteState) -> Result<String> {
    Ok(serde_json::to_string_pretty(&state_doc(state))?)
}

pub fn state_from_json(text: &str) -> Result<MultipartiteState> {
    state_from_doc(&serde_json::from_str(text)?)
}

pub fn povm_doc(p: &Povm) -> PovmDoc {
    PovmDoc {
        format: POVM_FORMAT.into(),
        dim: p.dim(),
        labels: p.labels(),
        elements: p.elements().iter().map(|e| MatrixDoc::from_matrix(e.matrix())).collect(),
    }
}

pub fn povm_from_doc(doc: &PovmDoc) -> Result<Povm> {
    check_format(&doc.format, POVM_FORMAT)?;
    let elements = doc.elements.iter().map(|e| HermitianOperator::new(e.to_matrix()?)).collect::<Result<Vec<_>>>()?;
    if let Some(e) = elements.iter().find(|e| e.dim() != doc.dim) {
        return Err(Error::DimensionMismatch { expected: doc.dim, got: e.dim() });
    }
    Povm::new(elements, Some(doc.labels.clone()))
}

pub fn povm_to_json(p: &Povm) -> Result<String> {
    Ok(serde_json::to_string_pretty(&povm_doc(p))?)
}

pub fn povm_from_json(text: &str) -> Result<Povm> {
    povm_from_doc(&serde_json::from_str(text)?)
}

/// One line of a snapshot stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub basis: String,
    pub outcome: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixDoc>,
}

impl SnapshotRecord {
    pub fn from_snapshot(s: &ShadowSnapshot, with_matrix: bool) -> Self {
        Self {
            basis: s.source.basis.clone(),
            outcome: s.source.outcome,
            matrix: with_matrix.then(|| MatrixDoc::from_matrix(s.matrix.matrix())),
        }
    }
}

/// Writes one JSON object per line.
pub fn write_snapshots<W: Write>(mut out: W, snapshots: &[ShadowSnapshot], with_matrix: bool) -> Result<()> {
    for s in snapshots {
        serde_json::to_writer(&mut out, &SnapshotRecord::from_snapshot(s, with_matrix))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads records written by [`write_snapshots`]; blank lines are skipped.
pub fn read_snapshots<R: BufRead>(input: R) -> Result<Vec<SnapshotRecord>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::{pauli6_povm, BasisMeasurement};
    use crate::rng::trial_rng;
    use crate::shadows::global_snapshot;
    use crate::states::{ghz_pure, haar_mixture};

    #[test]
    fn mixture_roundtrip_is_exact() {
        let mut rng = trial_rng(1, "io-mixture", 0);
        let state = haar_mixture(3, 2, 4, &mut rng).unwrap();
        let back = state_from_json(&state_to_json(&state).unwrap()).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn dense_roundtrip_is_exact() {
        let state = ghz_pure(3).unwrap();
        let back = state_from_json(&state_to_json(&state).unwrap()).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn povm_roundtrip_keeps_labels() {
        let p = pauli6_povm();
        let back = povm_from_json(&povm_to_json(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.label(2), "X+");
    }

    #[test]
    fn wrong_format_is_rejected() {
        let text = state_to_json(&ghz_pure(2).unwrap()).unwrap().replace(STATE_FORMAT, "other");
        assert!(state_from_json(&text).is_err());
    }

    #[test]
    fn snapshot_stream_roundtrip() {
        let u = BasisMeasurement::new(crate::linalg::hadamard()).unwrap();
        let snaps = vec![global_snapshot(&u, 0).unwrap(), global_snapshot(&u, 1).unwrap()];
        let mut buf = Vec::new();
        write_snapshots(&mut buf, &snaps, true).unwrap();
        let recs = read_snapshots(buf.as_slice()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].outcome, 1);
        assert_eq!(recs[0].matrix.as_ref().unwrap().to_matrix().unwrap(), *snaps[0].matrix.matrix());
        let mut bare = Vec::new();
        write_snapshots(&mut bare, &snaps, false).unwrap();
        assert!(!String::from_utf8(bare).unwrap().contains("matrix"));
    }
}
