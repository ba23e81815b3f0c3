//! Certified reduced-basis model order reduction for parametrized linear
//! coercive PDEs with affine parameter dependence.
//!
//! The pipeline splits into an offline phase (truth finite-element solves,
//! greedy snapshot selection, Galerkin projection, residual-Gram
//! precomputation) and an online phase whose cost is independent of the truth
//! dimension: reduced solves in `O(N^3)` and certified error bounds in
//! `O(Q^2 N^2)`.
//!
//! Modules:
//! - [`affine`]: parameter domains, affine operator decompositions, sampling
//! - [`truth`]: truth discretizations (thermal block, 1D Poisson, parabolic
//!   stepping, exact advection snapshots)
//! - [`online`]: reduced solve, residual dual norm, coercivity/continuity
//!   bounds, certificates
//! - [`greedy`]: weak greedy, POD, POD-Greedy offline training
//! - [`nwidth`]: Kolmogorov N-width measurements on snapshot sets
//! - [`cli`]: config-driven command surface and artifact export

pub mod affine;
pub mod cli;
pub mod error;
pub mod greedy;
pub mod linalg;
pub mod nwidth;
pub mod online;
pub mod truth;

pub use error::{Error, Result};
