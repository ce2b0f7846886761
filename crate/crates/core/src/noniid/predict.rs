//! Predictions, SUCCESS predicates and d-functions.
//!
//! Promise problems (pure-state verification, mixedness testing) are defined
//! through their failure sets; everything in the gap counts as a success.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{CVector, DensityMatrix, HermitianOperator};

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    /// Estimates of `tr(O_i σ)`, each in `[0, 1]`.
    ExpectationTuple(Vec<f64>),
    StateDescription(DensityMatrix),
    /// `false` is 0 (accept / null hypothesis), `true` is 1.
    Bit(bool),
    Scalar(f64),
    /// Some measurement device was never drawn during the coverage phase.
    CoverageFailure,
}

impl Prediction {
    /// Clips each estimate to `[0, 1]`; non-finite estimates are rejected.
    pub fn expectations(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite expectation estimate {v}")));
        }
        Ok(Self::ExpectationTuple(values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()))
    }

    pub fn scalar(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidParameter(format!("non-finite scalar prediction {value}")));
        }
        Ok(Self::Scalar(value))
    }

    pub fn is_coverage_failure(&self) -> bool {
        matches!(self, Self::CoverageFailure)
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::ExpectationTuple(_) => "expectation_tuple",
            Self::StateDescription(_) => "state_description",
            Self::Bit(_) => "bit",
            Self::Scalar(_) => "scalar",
            Self::CoverageFailure => "coverage_failure",
        }
    }

    /// Exact identity of the prediction, usable as a map key.
    pub fn key(&self) -> PredictionKey {
        let bits = |xs: &mut dyn Iterator<Item = f64>| xs.map(f64::to_bits).collect::<Vec<_>>();
        match self {
            Self::ExpectationTuple(v) => PredictionKey(0, bits(&mut v.iter().copied())),
            Self::StateDescription(rho) => {
                PredictionKey(1, bits(&mut rho.matrix().iter().flat_map(|z| [z.re, z.im])))
            }
            Self::Bit(b) => PredictionKey(2, vec![u64::from(*b)]),
            Self::Scalar(s) => PredictionKey(3, vec![s.to_bits()]),
            Self::CoverageFailure => PredictionKey(4, Vec::new()),
        }
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ExpectationTuple(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
                write!(f, "[{}]", parts.join(";"))
            }
            Self::StateDescription(rho) => {
                let diag: Vec<String> = (0..rho.dim()).map(|i| format!("{:.6}", rho.matrix()[(i, i)].re)).collect();
                write!(f, "diag[{}]", diag.join(";"))
            }
            Self::Bit(b) => write!(f, "{}", u8::from(*b)),
            Self::Scalar(s) => write!(f, "{s:.6}"),
            Self::CoverageFailure => write!(f, "coverage_failure"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PredictionKey(u8, Vec<u64>);

fn mismatch(expected: &str, p: &Prediction) -> Error {
    Error::PredictionMismatch(format!("expected {expected}, got {}", p.variant_name()))
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `‖σ − I/d‖₁`.
pub fn distance_to_maximally_mixed(sigma: &DensityMatrix) -> f64 {
    (sigma.op() - DensityMatrix::maximally_mixed(sigma.dim()).op()).trace_norm()
}

fn max_fidelity(targets: &[CVector], sigma: &DensityMatrix) -> Result<f64> {
    targets.iter().try_fold(0.0f64, |acc, psi| Ok(acc.max(sigma.fidelity_with_pure(psi)?)))
}

#[derive(Clone, Debug)]
pub enum SuccessPredicate {
    /// `∀i: |μ_i − tr(O_i σ)| ≤ ε`.
    ShadowTomography { observables: Vec<HermitianOperator>, epsilon: f64 },
    /// `‖σ̂ − σ‖₁ ≤ ε`.
    Tomography { epsilon: f64 },
    /// Fails on `(1, F ≥ 1−ε)` and `(0, F ≤ 1−2ε)` with `F` the best target fidelity.
    VerifyPure { targets: Vec<CVector>, epsilon: f64 },
    /// Fails on `(1, ‖σ−I/d‖₁ ≤ ε)` and `(0, ‖σ−I/d‖₁ ≥ 2ε)`.
    Mixedness { epsilon: f64 },
    /// `|S − ⟨Ψ|σ|Ψ⟩| ≤ ε`.
    FidelityEst { target: CVector, epsilon: f64 },
}

impl SuccessPredicate {
    pub fn epsilon(&self) -> f64 {
        match self {
            Self::ShadowTomography { epsilon, .. }
            | Self::Tomography { epsilon }
            | Self::VerifyPure { epsilon, .. }
            | Self::Mixedness { epsilon }
            | Self::FidelityEst { epsilon, .. } => *epsilon,
        }
    }

    /// The same problem at another precision.
    pub fn with_epsilon(&self, eps: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            Self::ShadowTomography { epsilon, .. }
            | Self::Tomography { epsilon }
            | Self::VerifyPure { epsilon, .. }
            | Self::Mixedness { epsilon }
            | Self::FidelityEst { epsilon, .. } => *epsilon = eps,
        }
        out
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::ShadowTomography { .. } => "shadow_tomography",
            Self::Tomography { .. } => "tomography",
            Self::VerifyPure { .. } => "verify_pure",
            Self::Mixedness { .. } => "mixedness",
            Self::FidelityEst { .. } => "fidelity",
        }
    }

    pub fn evaluate(&self, p: &Prediction, sigma: &DensityMatrix) -> Result<bool> {
        evaluate_success(self, p, sigma)
    }
}

/// Membership of `(p, σ)` in SUCCESS_ε. A coverage failure never succeeds.
pub fn evaluate_success(pred: &SuccessPredicate, p: &Prediction, sigma: &DensityMatrix) -> Result<bool> {
    if p.is_coverage_failure() {
        return Ok(false);
    }
    match pred {
        SuccessPredicate::ShadowTomography { observables, epsilon } => {
            let Prediction::ExpectationTuple(mu) = p else { return Err(mismatch("expectation tuple", p)) };
            check_dim(observables.len(), mu.len())?;
            observables.iter().zip(mu).try_fold(true, |ok, (o, m)| {
                check_dim(o.dim(), sigma.dim())?;
                Ok(ok && (m - o.expectation(sigma.op())).abs() <= *epsilon)
            })
        }
        SuccessPredicate::Tomography { epsilon } => {
            let Prediction::StateDescription(hat) = p else { return Err(mismatch("state description", p)) };
            check_dim(hat.dim(), sigma.dim())?;
            Ok((hat.op() - sigma.op()).trace_norm() <= *epsilon)
        }
        SuccessPredicate::VerifyPure { targets, epsilon } => {
            let Prediction::Bit(reject) = p else { return Err(mismatch("bit", p)) };
            let f = max_fidelity(targets, sigma)?;
            let fails = if *reject { f >= 1.0 - epsilon } else { f <= 1.0 - 2.0 * epsilon };
            Ok(!fails)
        }
        SuccessPredicate::Mixedness { epsilon } => {
            let Prediction::Bit(reject) = p else { return Err(mismatch("bit", p)) };
            let dist = distance_to_maximally_mixed(sigma);
            let fails = if *reject { dist <= *epsilon } else { dist >= 2.0 * epsilon };
            Ok(!fails)
        }
        SuccessPredicate::FidelityEst { target, epsilon } => {
            let Prediction::Scalar(s) = p else { return Err(mismatch("scalar", p)) };
            Ok((s - sigma.fidelity_with_pure(target)?).abs() <= *epsilon)
        }
    }
}

/// Distance-like functions defining SUCCESS_ε = {d(p, σ) ≤ ε}.
#[derive(Clone, Debug)]
pub enum DFunction {
    /// `½‖σ̂ − σ‖₁`.
    TraceDist,
    /// `max_i |μ_i − tr(O_i σ)|`.
    ShadowMax { observables: Vec<HermitianOperator> },
    /// `p + (1−p)(1 − ⟨Ψ|σ|Ψ⟩)`.
    VerifyD { target: CVector },
    /// `p + ½(1−p)‖σ − I/d‖₁`.
    MixednessD,
}

impl DFunction {
    /// The boundedness constant C.
    pub fn bound(&self) -> f64 {
        match self {
            Self::ShadowMax { .. } => 2.0,
            Self::TraceDist | Self::VerifyD { .. } | Self::MixednessD => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::TraceDist => "trace_dist",
            Self::ShadowMax { .. } => "shadow_max",
            Self::VerifyD { .. } => "verify_d",
            Self::MixednessD => "mixedness_d",
        }
    }

    pub fn evaluate(&self, p: &Prediction, sigma: &DensityMatrix) -> Result<f64> {
        evaluate_dfunction(self, p, sigma)
    }
}

/// `d(p, σ)`; a coverage failure scores the bound C.
pub fn evaluate_dfunction(d: &DFunction, p: &Prediction, sigma: &DensityMatrix) -> Result<f64> {
    if p.is_coverage_failure() {
        return Ok(d.bound());
    }
    let bit = |p: &Prediction| match p {
        Prediction::Bit(b) => Ok(f64::from(u8::from(*b))),
        other => Err(mismatch("bit", other)),
    };
    match d {
        DFunction::TraceDist => {
            let Prediction::StateDescription(hat) = p else { return Err(mismatch("state description", p)) };
            check_dim(hat.dim(), sigma.dim())?;
            Ok(hat.trace_distance(sigma))
        }
        DFunction::ShadowMax { observables } => {
            let Prediction::ExpectationTuple(mu) = p else { return Err(mismatch("expectation tuple", p)) };
            check_dim(observables.len(), mu.len())?;
            observables.iter().zip(mu).try_fold(0.0f64, |acc, (o, m)| {
                check_dim(o.dim(), sigma.dim())?;
                Ok(acc.max((m - o.expectation(sigma.op())).abs()))
            })
        }
        DFunction::VerifyD { target } => {
            let b = bit(p)?;
            Ok(b + (1.0 - b) * (1.0 - sigma.fidelity_with_pure(target)?))
        }
        DFunction::MixednessD => {
            let b = bit(p)?;
            Ok(b + 0.5 * (1.0 - b) * distance_to_maximally_mixed(sigma))
        }
    }
}
