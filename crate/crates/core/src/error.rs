use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not Hermitian: max |A - A^dagger| = {0:.3e}")]
    NotHermitian(f64),

    #[error("operator is not positive semidefinite: min eigenvalue {0:.3e}")]
    NotPsd(f64),

    #[error("trace {0} differs from 1")]
    BadTrace(f64),

    #[error("vector is not normalized: norm {0}")]
    NotNormalized(f64),

    #[error("site {site} out of range for {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("invalid POVM: {0}")]
    InvalidPovm(String),

    #[error("measurement is not informationally complete: {0}")]
    NotInformationallyComplete(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient sites: need more than {needed}, have {have}")]
    InsufficientSites { needed: usize, have: usize },

    #[error("degenerate sampling law: {0}")]
    DegenerateLaw(String),

    #[error("prediction variant does not match the predicate: {0}")]
    PredictionMismatch(String),

    #[error("empty input")]
    Empty,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
