//! Algorithms 1 and 2: lifting i.i.d. learners to permutation-invariant inputs.
//!
//! Sites are 0-indexed; the test system is the last site `N − 1`. Algorithm 1
//! uses sites `0..K` for learning, `K..l` for calibration and never touches
//! `l..N−1`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::DensityMatrix;
use crate::measurements::{sample_index, Povm};
use crate::rng::TrialRng;
use crate::states::{Conditioner, MultipartiteState};

use super::predict::Prediction;

/// One realization of an i.i.d. algorithm: its devices and how outcomes map to a prediction.
pub struct RunPlan {
    pub devices: Vec<Arc<Povm>>,
    /// Receives the outcome of device `t` at position `t`.
    pub predictor: Box<dyn Fn(&[usize]) -> Result<Prediction> + Send>,
}

pub type Planner = Arc<dyn Fn(&mut TrialRng) -> Result<RunPlan> + Send + Sync>;

/// Incoherent, non-adaptive i.i.d. algorithm `A = D ∘ (M₁ ⊗ ⋯ ⊗ M_{k_A})`.
///
/// Randomized learners (random Clifford bases, sampled Paulis) draw their
/// devices in the planner; the classical randomness is independent of the
/// state, so the composite is still a fixed incoherent measurement.
#[derive(Clone)]
pub struct IidAlgorithmSpec {
    pub name: String,
    pub site_dim: usize,
    /// Nominal number of devices; a planner may realize a different count.
    pub k_a: usize,
    pub delta_a: f64,
    planner: Planner,
    fixed: bool,
}

impl fmt::Debug for IidAlgorithmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IidAlgorithmSpec")
            .field("name", &self.name)
            .field("site_dim", &self.site_dim)
            .field("k_a", &self.k_a)
            .field("delta_a", &self.delta_a)
            .field("fixed", &self.fixed)
            .finish()
    }
}

fn check_delta(delta_a: f64) -> Result<()> {
    if !(delta_a > 0.0 && delta_a < 1.0) {
        return Err(Error::InvalidParameter(format!("delta_A = {delta_a} must lie in (0, 1)")));
    }
    Ok(())
}

impl IidAlgorithmSpec {
    pub fn new(name: impl Into<String>, site_dim: usize, k_a: usize, delta_a: f64, planner: Planner) -> Result<Self> {
        if k_a == 0 {
            return Err(Error::InvalidParameter("k_A must be at least 1".into()));
        }
        check_delta(delta_a)?;
        Ok(Self { name: name.into(), site_dim, k_a, delta_a, planner, fixed: false })
    }

    /// Fixed device list and a deterministic predictor.
    pub fn fixed(
        name: impl Into<String>,
        devices: Vec<Arc<Povm>>,
        delta_a: f64,
        predictor: Arc<dyn Fn(&[usize]) -> Result<Prediction> + Send + Sync>,
    ) -> Result<Self> {
        let first = devices.first().ok_or(Error::Empty)?;
        let site_dim = first.dim();
        if let Some(bad) = devices.iter().find(|p| p.dim() != site_dim) {
            return Err(Error::DimensionMismatch { expected: site_dim, got: bad.dim() });
        }
        let k_a = devices.len();
        let planner: Planner = Arc::new(move |_rng: &mut TrialRng| {
            let predictor = predictor.clone();
            Ok(RunPlan { devices: devices.clone(), predictor: Box::new(move |x: &[usize]| predictor(x)) })
        });
        let mut spec = Self::new(name, site_dim, k_a, delta_a, planner)?;
        spec.fixed = true;
        Ok(spec)
    }

    /// True when every plan has the same devices and predictor.
    pub fn is_fixed(&self) -> bool {
        self.fixed
    }

    pub fn plan(&self, rng: &mut TrialRng) -> Result<RunPlan> {
        let plan = (self.planner)(rng)?;
        if plan.devices.is_empty() {
            return Err(Error::Empty);
        }
        if let Some(bad) = plan.devices.iter().find(|p| p.dim() != self.site_dim) {
            return Err(Error::DimensionMismatch { expected: self.site_dim, got: bad.dim() });
        }
        Ok(plan)
    }

    /// Runs the algorithm on `σ^{⊗k_A}` directly.
    pub fn run_iid(&self, sigma: &DensityMatrix, rng: &mut TrialRng) -> Result<Prediction> {
        let plan = self.plan(rng)?;
        let outcomes = plan
            .devices
            .iter()
            .map(|m| Ok(sample_index(&m.probabilities(sigma)?, rng)))
            .collect::<Result<Vec<_>>>()?;
        (plan.predictor)(&outcomes)
    }
}

/// `K = k_A · max(1, ⌈ln(k_A/δ_A)⌉)`.
pub fn coverage_k(k_a: usize, delta_a: f64) -> usize {
    let rounds = (k_a as f64 / delta_a).ln().ceil().max(1.0);
    k_a * rounds as usize
}

/// Smallest N accepted by Algorithm 1: `N > 2(K + 1)`.
pub fn algorithm1_min_sites(k_a: usize, delta_a: f64) -> usize {
    2 * (coverage_k(k_a, delta_a) + 1) + 1
}

/// Union bound on the coupon-collector miss: `k_A e^{−K/k_A}`.
pub fn coverage_failure_bound(k_a: usize, big_k: usize) -> f64 {
    k_a as f64 * (-(big_k as f64) / k_a as f64).exp()
}

/// Exact probability that `K` uniform draws from `k_A` devices miss at least one.
pub fn coverage_failure_exact(k_a: usize, big_k: usize) -> f64 {
    // Inclusion–exclusion over the set of missed devices.
    let mut hit = 0.0;
    let mut binom = 1.0;
    for j in 0..=k_a {
        let term = binom * (1.0 - j as f64 / k_a as f64).powi(big_k as i32);
        hit += if j % 2 == 0 { term } else { -term };
        binom *= (k_a - j) as f64 / (j + 1) as f64;
    }
    (1.0 - hit).clamp(0.0, 1.0)
}

/// `s(t)`: first draw index that selected device `t`, if every device was drawn.
pub fn first_hits(r: &[usize], k_a: usize) -> Option<Vec<usize>> {
    let mut s = vec![usize::MAX; k_a];
    let mut missing = k_a;
    for (i, &t) in r.iter().enumerate() {
        if s[t] == usize::MAX {
            s[t] = i;
            missing -= 1;
            if missing == 0 {
                break;
            }
        }
    }
    (missing == 0).then_some(s)
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    /// Exclusive end of the calibration block (sites `K..l` or `k..l`).
    pub l: usize,
    /// Device index per measured site `0..l`; empty for Algorithm 2.
    pub r: Vec<usize>,
    pub w: Vec<usize>,
    pub v: Vec<usize>,
    pub p: Prediction,
    /// Test-site state conditioned on every outcome.
    pub conditional_test_state: DensityMatrix,
    /// Test-site state conditioned on the calibration outcomes only.
    pub test_state_given_w: DensityMatrix,
    pub coverage_ok: bool,
}

pub trait Wrapper: Send + Sync {
    fn name(&self) -> String;
    fn run(&self, state: &MultipartiteState, rng: &mut TrialRng) -> Result<RunRecord>;
}

fn test_site(state: &MultipartiteState) -> usize {
    state.n_sites() - 1
}

/// Algorithm 1 on the first N sites of `state`.
pub fn algorithm1_run(state: &MultipartiteState, alg: &IidAlgorithmSpec, rng: &mut TrialRng) -> Result<RunRecord> {
    if state.site_dim() != alg.site_dim {
        return Err(Error::DimensionMismatch { expected: alg.site_dim, got: state.site_dim() });
    }
    let plan = alg.plan(rng)?;
    let k_a = plan.devices.len();
    let big_k = coverage_k(k_a, alg.delta_a);
    let n = state.n_sites();
    if n <= 2 * (big_k + 1) {
        return Err(Error::InsufficientSites { needed: 2 * (big_k + 1), have: n });
    }
    let l = rng.random_range(big_k + 1..=big_k + n / 2);
    let r: Vec<usize> = (0..l).map(|_| rng.random_range(0..k_a)).collect();

    let mut cond = Conditioner::new(state);
    let w = (big_k..l).map(|t| cond.measure(t, &plan.devices[r[t]], rng)).collect::<Result<Vec<_>>>()?;
    let test_state_given_w = cond.reduced(test_site(state))?;
    let v = (0..big_k).map(|t| cond.measure(t, &plan.devices[r[t]], rng)).collect::<Result<Vec<_>>>()?;
    let conditional_test_state = cond.reduced(test_site(state))?;

    let hits = first_hits(&r[..big_k], k_a);
    let p = match &hits {
        Some(s) => {
            let outcomes: Vec<usize> = s.iter().map(|&i| v[i]).collect();
            (plan.predictor)(&outcomes)?
        }
        None => Prediction::CoverageFailure,
    };
    Ok(RunRecord { l, r, w, v, p, conditional_test_state, test_state_given_w, coverage_ok: hits.is_some() })
}

#[derive(Clone, Debug)]
pub struct Algorithm1(pub IidAlgorithmSpec);

impl Wrapper for Algorithm1 {
    fn name(&self) -> String {
        format!("algorithm1[{}]", self.0.name)
    }

    fn run(&self, state: &MultipartiteState, rng: &mut TrialRng) -> Result<RunRecord> {
        algorithm1_run(state, &self.0, rng)
    }
}

/// A general (possibly entangled) measurement on `k` sites and its classical post-processing.
#[derive(Clone)]
pub struct GeneralAlgorithm {
    pub povm: Arc<Povm>,
    pub predictor: Arc<dyn Fn(usize) -> Result<Prediction> + Send + Sync>,
}

impl fmt::Debug for GeneralAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralAlgorithm").field("dim", &self.povm.dim()).field("outcomes", &self.povm.len()).finish()
    }
}

/// Which phase of Algorithm 2 is sampled first. Both give the same joint law.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Algorithm2Order {
    /// Joint measurement on `0..k`, then the projection phase.
    #[default]
    Listing,
    /// Projection phase on `k..l`, then the joint measurement.
    Prose,
}

/// Algorithm 2: `general` on sites `0..k`, `m_dist` on sites `k..l`.
pub fn algorithm2_run(
    state: &MultipartiteState,
    general: &GeneralAlgorithm,
    m_dist: &Povm,
    k: usize,
    order: Algorithm2Order,
    rng: &mut TrialRng,
) -> Result<RunRecord> {
    let n = state.n_sites();
    if k == 0 || 2 * k >= n {
        return Err(Error::InvalidParameter(format!("Algorithm 2 needs 1 <= k < N/2, got k = {k}, N = {n}")));
    }
    if m_dist.dim() != state.site_dim() {
        return Err(Error::DimensionMismatch { expected: state.site_dim(), got: m_dist.dim() });
    }
    let joint_sites: Vec<usize> = (0..k).collect();
    let mut cond = Conditioner::new(state);
    let measure_w = |cond: &mut Conditioner, rng: &mut TrialRng| -> Result<(usize, Vec<usize>)> {
        let l = rng.random_range(k + 1..=k + n / 2);
        let w = (k..l).map(|t| cond.measure(t, m_dist, rng)).collect::<Result<Vec<_>>>()?;
        Ok((l, w))
    };
    let (l, w, x, test_state_given_w) = match order {
        Algorithm2Order::Listing => {
            let x = cond.measure_joint(&joint_sites, &general.povm, rng)?;
            let (l, w) = measure_w(&mut cond, rng)?;
            // ρ given w alone: rerun the w phase on a fresh session with the same outcomes.
            let mut only_w = Conditioner::new(state);
            for (t, &o) in (k..l).zip(&w) {
                only_w.condition(t, m_dist.element(o))?;
            }
            (l, w, x, only_w.reduced(test_site(state))?)
        }
        Algorithm2Order::Prose => {
            let (l, w) = measure_w(&mut cond, rng)?;
            let given_w = cond.reduced(test_site(state))?;
            let x = cond.measure_joint(&joint_sites, &general.povm, rng)?;
            (l, w, x, given_w)
        }
    };
    let conditional_test_state = cond.reduced(test_site(state))?;
    let p = (general.predictor)(x)?;
    Ok(RunRecord { l, r: Vec::new(), w, v: vec![x], p, conditional_test_state, test_state_given_w, coverage_ok: true })
}

#[derive(Clone, Debug)]
pub struct Algorithm2 {
    pub general: GeneralAlgorithm,
    pub m_dist: Arc<Povm>,
    pub k: usize,
    pub order: Algorithm2Order,
}

impl Wrapper for Algorithm2 {
    fn name(&self) -> String {
        format!("algorithm2[k={}]", self.k)
    }

    fn run(&self, state: &MultipartiteState, rng: &mut TrialRng) -> Result<RunRecord> {
        algorithm2_run(state, &self.general, &self.m_dist, self.k, self.order, rng)
    }
}
