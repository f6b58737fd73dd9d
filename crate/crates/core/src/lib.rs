//! Galerkin coarse-graining of 1D atomistic chains with Krylov-enriched interface bases.

pub mod analysis;
pub mod baselines;
pub mod cgspace;
pub mod crack;
pub mod enrichment;
pub mod error;
pub mod model;
pub mod qr;
pub mod quadrature;
pub mod reduction;
pub mod solvers;

pub use error::{AccError, Result};
