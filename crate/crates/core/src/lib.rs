//! Off-diagonal asymptotics of lattice Green's functions.
//!
//! A positive definite, finite-range, symmetric operator on `hZ^d` is
//! described by smooth on-site and pair fields. Its inverse decays like
//! `exp(-d_F(x, y) / h)` with `d_F` the distance of a Finsler metric read off
//! a Hamiltonian. This crate builds that geometry, the leading asymptotic
//! formula, and independent oracles (direct lattice solves and spectral
//! quadrature) to test it against.

pub mod asymptotics;
pub mod error;
pub mod expr;
pub mod finsler;
pub mod geodesics;
pub mod hamiltonian;
pub mod jacobi;
pub mod jet;
pub mod lattice;
pub mod model;
pub mod ode;
pub mod spectral;
pub mod symbol;

pub use error::{Error, Result};
