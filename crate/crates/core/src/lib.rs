//! Pilot-wave dynamics for non-relativistic particles, Pauli spinors and
//! mode-truncated electromagnetic field beables.
//!
//! The crate is organised around the pieces of a pilot-wave simulation:
//!
//! - [`model`]: mode bases, Hamiltonian descriptions and declarative scenarios.
//! - [`grid`]: wavefunctions on tensor-product grids with split-step and exact
//!   propagators.
//! - [`fock`]: field-mode wavefunctions in a truncated number basis with
//!   pointwise Hermite evaluation.
//! - [`guidance`]: densities, currents, velocity fields and trajectory
//!   integration.
//! - [`beables`]: physical-space fields reconstructed from mode beables, local
//!   expectation values and branch analysis.
//! - [`ensemble`]: equilibrium sampling, equivariance statistics and full runs.
//! - [`scenarios`]: bundled scenario presets and their property fixtures.
//!
//! Natural units are used throughout (`c = 1`); particle and Pauli models keep an
//! explicit `hbar` that defaults to one.

pub mod beables;
pub mod ensemble;
pub mod fock;
pub mod grid;
pub mod guidance;
pub mod io;
pub mod linalg;
pub mod model;
pub mod scenarios;

pub use num_complex::Complex64;

/// Version string recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
