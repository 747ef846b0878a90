//! Occupancy statistics under bounded size-bias couplings.
//!
//! The crate simulates two sparse occupancy models — degree counts in an
//! Erdos-Renyi random graph and neighbor counts in a planar germ-grain model
//! on a torus — and verifies, against exact brute-force oracles at small
//! scale and Monte Carlo rate sweeps at large scale, the ingredients of
//! translated-Poisson approximation bounds built from Stein couplings:
//! coupling increments, conditional second-moment (smoothness) terms, and
//! the resulting total-variation and local error rates.
//!
//! Modules:
//! - [`dist`]: integer pmfs, the translated Poisson family, metrics,
//!   smoothness functionals.
//! - [`sizebias`]: the bounded +-1 increment mechanism and size-bias
//!   transforms.
//! - [`er`]: the Erdos-Renyi model, its coupling and local statistics.
//! - [`gg`]: the germ-grain model, its coupling and increment statistics.
//! - [`oracle`]: exhaustive small-graph enumeration and chi-square GOF.
//! - [`stein`]: estimators and evaluators for the coupling bound inputs.
//! - [`harness`]: experiment configs, rate sweeps, log-log fits, CSV.

pub mod dist;
pub mod er;
pub mod error;
pub mod gg;
pub mod harness;
pub mod oracle;
pub mod rng;
pub mod sizebias;
pub mod stats;
pub mod stein;

pub use error::{Error, Result};
