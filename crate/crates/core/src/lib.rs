//! Simulation laboratory for a stochastic thermalizing N-particle system on
//! the torus, the regularized and true BGK equations, and the coupling
//! between the two.
//!
//! The crate provides:
//! - torus geometry and the compactly supported smearing kernel φ
//!   ([`torus`], [`kernel`]),
//! - Maxwellian sampling and the closed-form optimal velocity coupling
//!   ([`maxwell`]),
//! - smeared empirical hydrodynamical fields of a particle configuration,
//!   jump weights and good-set diagnostics ([`fields`]),
//! - the event-driven N-particle jump process ([`particle`]),
//! - a semi-Lagrangian spectral solver for the kinetic equations
//!   ([`solver`]),
//! - the coupled pair process and the I_N(t) estimator ([`coupling`]),
//! - exact point-cloud W2 via assignment ([`assignment`]) and the
//!   configuration-driven experiment runners ([`experiments`]).

pub mod assignment;
pub mod coupling;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod kernel;
pub mod maxwell;
pub mod numerics;
pub mod particle;
pub mod rng;
pub mod solver;
pub mod torus;

pub use error::{Error, Result};
