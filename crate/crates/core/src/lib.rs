//! Weakly driven two-mode optomechanics.
//!
//! Two optical modes exchange photons through a mechanical mode via
//! three-wave mixing. The crate provides the full master-equation route
//! (sparse Liouvillian, steady state, quantum-regression correlations) and
//! an independent closed-form amplitude model used to cross-check it.

pub mod analytic;
pub mod error;
mod expm;
pub mod fock;
pub mod krylov;
pub mod model;
pub mod regression;
pub mod sparse;
pub mod steady;

pub use error::{Error, Result};
pub use fock::{DensityMatrix, HilbertSpace, Mode, QOperator};
pub use model::{Liouvillian, SystemParams};
