//! Classical-shadow snapshots and the median-of-means aggregator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{tensor_all, CVector, DensityMatrix, HermitianOperator};
use crate::measurements::BasisMeasurement;
use crate::stats::lower_median;

/// Where a snapshot came from: a basis label and the observed outcome index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotSource {
    pub basis: String,
    pub outcome: usize,
}

/// Unit-trace, generally indefinite, single-shot estimator of a state.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowSnapshot {
    pub matrix: HermitianOperator,
    pub source: SnapshotSource,
}

/// `(d+1) U†|v⟩⟨v|U − I`.
pub fn global_snapshot(u: &BasisMeasurement, v: usize) -> Result<ShadowSnapshot> {
    let d = u.dim();
    if v >= d {
        return Err(Error::InvalidParameter(format!("outcome {v} out of range for dimension {d}")));
    }
    let matrix = &u.projector(v).scale((d + 1) as f64) - &HermitianOperator::identity(d);
    Ok(ShadowSnapshot { matrix, source: SnapshotSource { basis: "global".into(), outcome: v } })
}

/// `⊗_q (3 u_q†|v_q⟩⟨v_q|u_q − I)` for single-qubit bases.
pub fn local_snapshot(per_qubit: &[(BasisMeasurement, usize)]) -> Result<ShadowSnapshot> {
    if per_qubit.is_empty() {
        return Err(Error::Empty);
    }
    let factors = per_qubit
        .iter()
        .map(|(u, v)| {
            if u.dim() != 2 {
                return Err(Error::DimensionMismatch { expected: 2, got: u.dim() });
            }
            Ok(global_snapshot(u, *v)?.matrix)
        })
        .collect::<Result<Vec<_>>>()?;
    let outcome = per_qubit.iter().fold(0, |acc, (_, v)| 2 * acc + v);
    Ok(ShadowSnapshot { matrix: tensor_all(&factors), source: SnapshotSource { basis: "local".into(), outcome } })
}

/// `⟨Ψ|snapshot|Ψ⟩ = (d+1)|⟨v|U|Ψ⟩|² − 1` without forming the snapshot.
pub fn global_snapshot_overlap(u: &BasisMeasurement, v: usize, psi: &CVector) -> f64 {
    let amp = (u.unitary().row(v) * psi)[(0, 0)];
    (u.dim() + 1) as f64 * amp.norm_sqr() - 1.0
}

/// Exact expectation of the global snapshot over `weights`-distributed bases and Born outcomes.
pub fn shadow_mean_exact(rho: &DensityMatrix, bases: &[BasisMeasurement], weights: &[f64]) -> Result<HermitianOperator> {
    if bases.len() != weights.len() || bases.is_empty() {
        return Err(Error::DimensionMismatch { expected: bases.len(), got: weights.len() });
    }
    let d = rho.dim();
    let mut acc = HermitianOperator::zeros(d);
    for (u, &w) in bases.iter().zip(weights) {
        if u.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: u.dim() });
        }
        for v in 0..d {
            let p = u.projector(v).expectation(rho.op());
            acc = &acc + &global_snapshot(u, v)?.matrix.scale(w * p);
        }
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MedianOfMeans {
    pub estimate: f64,
    pub group_size: usize,
    /// Trailing values that did not fill a group.
    pub dropped: usize,
}

/// Median (lower-middle for even counts) of `k` consecutive group means.
pub fn median_of_means(values: &[f64], k: usize) -> Result<MedianOfMeans> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    if k == 0 || k > values.len() {
        return Err(Error::InvalidParameter(format!("{k} groups for {} values", values.len())));
    }
    let group_size = values.len() / k;
    let means: Vec<f64> = values
        .chunks_exact(group_size)
        .take(k)
        .map(|g| g.iter().sum::<f64>() / group_size as f64)
        .collect();
    Ok(MedianOfMeans { estimate: lower_median(&means)?, group_size, dropped: values.len() - k * group_size })
}

/// Median-of-means estimate of `tr(O ρ)` for every observable.
pub fn estimate_expectations(snapshots: &[ShadowSnapshot], observables: &[HermitianOperator], k: usize) -> Result<Vec<f64>> {
    let d = snapshots.first().ok_or(Error::Empty)?.matrix.dim();
    observables
        .iter()
        .map(|o| {
            if o.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: o.dim() });
            }
            let vals: Vec<f64> = snapshots.iter().map(|s| s.matrix.expectation(o)).collect();
            Ok(median_of_means(&vals, k)?.estimate)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hadamard, ket, CMatrix};
    use crate::measurements::{pauli_basis_unitaries, single_qubit_cliffords};
    use crate::rng::trial_rng;
    use crate::states::random_mixed_state;
    use rand::Rng;

    fn basis(u: CMatrix) -> BasisMeasurement {
        BasisMeasurement::new(u).unwrap()
    }

    fn pauli_bases() -> Vec<BasisMeasurement> {
        pauli_basis_unitaries().into_iter().map(basis).collect()
    }

    #[test]
    fn global_snapshot_examples() {
        let s = global_snapshot(&basis(CMatrix::identity(2, 2)), 0).unwrap();
        assert!(s.matrix.max_abs_diff(&HermitianOperator::from_real_diagonal(&[2.0, -1.0])) < 1e-15);
        let h = global_snapshot(&basis(hadamard()), 0).unwrap();
        let plus = HermitianOperator::outer(&(hadamard() * ket(2, 0)));
        let expected = &plus.scale(3.0) - &HermitianOperator::identity(2);
        assert!(h.matrix.max_abs_diff(&expected) < 1e-15);
        assert!((h.matrix.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn local_snapshot_examples() {
        let id = || basis(CMatrix::identity(2, 2));
        let one = local_snapshot(&[(basis(hadamard()), 1)]).unwrap();
        assert!(one.matrix.max_abs_diff(&global_snapshot(&basis(hadamard()), 1).unwrap().matrix) < 1e-15);
        let two = local_snapshot(&[(id(), 0), (id(), 0)]).unwrap();
        let f = HermitianOperator::from_real_diagonal(&[2.0, -1.0]);
        assert!(two.matrix.max_abs_diff(&f.tensor(&f)) < 1e-15);
        let mut rng = trial_rng(0, "local", 0);
        let cl = single_qubit_cliffords();
        let parts: Vec<_> = (0..3).map(|_| (basis(cl[rng.random_range(0..24)].clone()), rng.random_range(0..2))).collect();
        assert!((local_snapshot(&parts).unwrap().matrix.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_mean_examples() {
        let w = [1.0 / 3.0; 3];
        for rho in [
            DensityMatrix::basis_state(2, 0),
            DensityMatrix::maximally_mixed(2),
            DensityMatrix::pure(&(hadamard() * ket(2, 0))).unwrap(),
        ] {
            let m = shadow_mean_exact(&rho, &pauli_bases(), &w).unwrap();
            assert!(m.max_abs_diff(rho.op()) < 1e-12);
        }
    }

    #[test]
    fn exact_mean_unbiased_on_random_states() {
        let mut rng = trial_rng(0, "unbiased", 0);
        let cl: Vec<_> = single_qubit_cliffords().iter().cloned().map(basis).collect();
        for _ in 0..20 {
            let rho = random_mixed_state(2, &mut rng);
            assert!(shadow_mean_exact(&rho, &pauli_bases(), &[1.0 / 3.0; 3]).unwrap().max_abs_diff(rho.op()) < 1e-12);
            assert!(shadow_mean_exact(&rho, &cl, &[1.0 / 24.0; 24]).unwrap().max_abs_diff(rho.op()) < 1e-12);
        }
    }

    #[test]
    fn median_of_means_examples() {
        assert_eq!(median_of_means(&[1.0, 2.0, 100.0], 3).unwrap().estimate, 2.0);
        assert_eq!(median_of_means(&[4.5; 10], 3).unwrap().estimate, 4.5);
        assert_eq!(median_of_means(&[4.5; 10], 3).unwrap().dropped, 1);
        assert!((median_of_means(&[1.0, 2.0, 6.0], 1).unwrap().estimate - 3.0).abs() < 1e-15);
        assert!(median_of_means(&[], 1).is_err());
    }

    #[test]
    fn median_of_means_is_robust_to_minority_corruption() {
        let mut rng = trial_rng(0, "mom", 0);
        let k = 9;
        let clean: Vec<f64> = (0..k * 10).map(|_| rng.random::<f64>()).collect();
        let means: Vec<f64> = clean.chunks(10).map(|g| g.iter().sum::<f64>() / 10.0).collect();
        let (lo, hi) = means.iter().fold((f64::MAX, f64::MIN), |(a, b), &m| (a.min(m), b.max(m)));
        let base = median_of_means(&clean, k).unwrap().estimate;
        let mut corrupted = clean.clone();
        for g in 0..(k - 1) / 2 {
            corrupted[g * 10] = if g % 2 == 0 { 1e9 } else { -1e9 };
        }
        let est = median_of_means(&corrupted, k).unwrap().estimate;
        assert!(est >= lo && est <= hi);
        assert!((est - base).abs() <= hi - lo);
    }

    #[test]
    fn estimate_expectations_examples() {
        let rho = random_mixed_state(2, &mut trial_rng(0, "est", 0));
        let exact = ShadowSnapshot { matrix: rho.op().clone(), source: SnapshotSource { basis: "exact".into(), outcome: 0 } };
        let o = HermitianOperator::from_real_diagonal(&[0.3, -0.7]);
        let est = estimate_expectations(&vec![exact; 5], &[o.clone(), HermitianOperator::identity(2)], 2).unwrap();
        assert!((est[0] - o.expectation(rho.op())).abs() < 1e-14 && (est[1] - 1.0).abs() < 1e-14);
    }

    fn sample_pauli_snapshots(rho: &DensityMatrix, n: usize, rng: &mut impl Rng) -> Vec<ShadowSnapshot> {
        let bases = pauli_bases();
        (0..n)
            .map(|_| {
                let b = &bases[rng.random_range(0..3)];
                let p0 = b.projector(0).expectation(rho.op());
                let v = usize::from(rng.random::<f64>() >= p0);
                global_snapshot(b, v).unwrap()
            })
            .collect()
    }

    #[test]
    fn sampled_snapshots_concentrate() {
        let mut rng = trial_rng(0, "conc", 0);
        let rho = DensityMatrix::basis_state(2, 0);
        let snaps = sample_pauli_snapshots(&rho, 10_000, &mut rng);
        let est = estimate_expectations(&snaps, &[rho.op().clone()], 10).unwrap()[0];
        assert!((est - 1.0).abs() < 0.05);
        for s in &snaps {
            assert!((s.matrix.trace() - 1.0).abs() < 1e-12);
            assert!((s.matrix.expectation(&HermitianOperator::identity(2)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deviation_halves_when_samples_quadruple() {
        let mut rng = trial_rng(0, "conc", 1);
        let rho = random_mixed_state(2, &mut rng);
        let o = HermitianOperator::from_real_diagonal(&[1.0, 0.0]);
        let truth = o.expectation(rho.op());
        let rms = |n: usize, rng: &mut crate::rng::TrialRng| {
            let reps = 400;
            let ss: f64 = (0..reps)
                .map(|_| {
                    let e = estimate_expectations(&sample_pauli_snapshots(&rho, n, rng), &[o.clone()], 1).unwrap()[0];
                    (e - truth).powi(2)
                })
                .sum();
            (ss / reps as f64).sqrt()
        };
        let ratio = rms(100, &mut rng) / rms(400, &mut rng);
        assert!(ratio > 2.0 / 1.6 && ratio < 2.0 * 1.6, "{ratio}");
    }

    #[test]
    fn overlap_fast_path_matches_matrix() {
        let mut rng = trial_rng(0, "ov", 0);
        let psi = crate::states::haar_vector(2, &mut rng);
        let proj = HermitianOperator::outer(&psi);
        for u in single_qubit_cliffords() {
            let b = basis(u.clone());
            for v in 0..2 {
                let m = global_snapshot(&b, v).unwrap().matrix.expectation(&proj);
                assert!((m - global_snapshot_overlap(&b, v, &psi)).abs() < 1e-12);
            }
        }
    }
}
