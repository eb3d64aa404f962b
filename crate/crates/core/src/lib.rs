//! Probabilistic and finite-difference solvers for parabolic equations with
//! Neumann boundary conditions on bounded convex domains, and tools to study
//! their large-time behaviour `u(T, x) ≈ λT + v(x) + L`.
//!
//! * [`geometry`]: domains `G = {phi > 0}`, projection, penalization.
//! * [`sde`]: reflected and penalized diffusions with boundary local time.
//! * [`bsde`]: regression Monte Carlo for BSDEs with a `∫ g dK` term.
//! * [`ebsde`]: the ergodic constant `λ` and profile `v`.
//! * [`pde_oracle`]: Crank–Nicolson reference solver in 1D.
//! * [`asymptotics`]: `λ` rate, renormalized profile, limit and decay rate.
//! * [`control`]: ergodic control with a finite control set.
//! * [`experiment`] and [`suite`]: config-driven runs and the benchmark suite.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod asymptotics;
pub mod bsde;
pub mod config;
pub mod control;
pub mod ebsde;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod expr;
pub mod field;
pub mod geometry;
pub mod pde_oracle;
pub mod regression;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod suite;

pub use error::{LabError, Result};
pub use exec::Exec;
pub use field::{Driver, ScalarField, VectorField};
pub use geometry::{ConvexDomain, DomainSpec};
pub use stats::Estimate;
