//! Numerical laboratory for learning properties of quantum states from copies
//! that are not independent and identically distributed.
//!
//! The crate simulates N-partite states (dense or as mixtures of product
//! states), local and randomized measurements, classical shadows, the
//! de Finetti quantities that control non-i.i.d. learning, and the wrapper
//! algorithms that turn i.i.d. learners into learners for arbitrary states.

#![forbid(unsafe_code)]

pub mod definetti;
pub mod error;
pub mod io;
pub mod linalg;
pub mod measurements;
pub mod noniid;
pub mod rng;
pub mod shadows;
pub mod states;
pub mod stats;

pub use error::{Error, Result};
