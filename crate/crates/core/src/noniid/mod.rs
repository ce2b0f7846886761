//! Wrapper algorithms that lift i.i.d. learners to permutation-invariant inputs,
//! the error-probability functionals that score them and the application protocols.

pub mod appendix_a;
pub mod error_prob;
pub mod predict;
pub mod protocols;
pub mod wrapper;

pub use error_prob::{
    algorithm3_exact, algorithm3_run, algorithm3_sampled, delta_prime, error_probability_with_calibration,
    iid_error_probability, Algorithm3Table, ConditionalOnP, ErrorEstimate, TrialOutcome,
};
pub use predict::{evaluate_dfunction, evaluate_success, DFunction, Prediction, SuccessPredicate};
pub use wrapper::{
    algorithm1_run, algorithm2_run, coverage_k, Algorithm1, Algorithm2, Algorithm2Order, GeneralAlgorithm,
    IidAlgorithmSpec, RunPlan, RunRecord, Wrapper,
};
