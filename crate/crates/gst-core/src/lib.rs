//! Grouped sequential training toolkit: synthetic heterogeneous task
//! families, gradient-based affinity estimation, spectral task grouping,
//! scheduling regimes under a shared gradient budget, and verification of
//! the algebraic identities and bounds the scheduling theory rests on.

pub mod affinity;
pub mod error;
pub mod grouping;
pub mod harness;
pub mod heterogeneity;
pub mod linalg;
pub mod objective;
pub mod rng;
pub mod scheduler;
pub mod tasks;
pub mod textio;
pub mod vector;

pub use error::{Error, Result};
pub use objective::Objective;
pub use rng::SeededRng;
pub use vector::ParamVector;
