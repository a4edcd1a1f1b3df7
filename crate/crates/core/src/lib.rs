//! Multiscale reduced basis solver for the semiclassical Schrödinger
//! equation `iε ψ_t = -(ε²/2) Δψ + v(x, ω) ψ` with random potentials on
//! periodic domains.
//!
//! The offline stage builds localized multiscale basis functions from a
//! constrained quadratic program for sampled potentials and compresses them
//! per coarse node with POD. The online stage evolves the reduced Galerkin
//! system with Crank–Nicolson for quasi-Monte Carlo samples of the potential.

pub mod cache;
pub mod config;
pub mod error;
pub mod evolve;
pub mod experiments;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod ms_basis;
pub mod observables;
pub mod pod;
pub mod randfield;
pub mod sampling;

pub use error::{Error, Result};
pub use num_complex::Complex64;
