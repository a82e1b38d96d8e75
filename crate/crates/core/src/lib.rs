//! Exact finite-dimensional thermodynamics built on observational entropy.
//!
//! The crate computes observational entropies under coarse-grainings,
//! effective temperatures and chemical potentials, entropy-production
//! hierarchies for driven isolated and open systems, and two-point
//! measurement fluctuation theorems, all by exact diagonalization.

pub mod dynamics;
pub mod entropy;
pub mod error;
pub mod experiment;
pub mod fluct;
pub mod graining;
pub mod lawsuite;
pub mod linalg;
pub mod models;
pub mod report;
pub mod thermo;
pub mod tol;

pub use error::{Error, Result};
