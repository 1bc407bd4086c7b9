//! Diabatic frozen-Gaussian surface hopping for the two-level semiclassical
//! Schrödinger equation
//!
//! ```text
//! iε ∂t u = -(ε²/2) Δ u + [[V00, δ V01], [δ V10, V11]] u
//! ```
//!
//! Each trajectory carries a frozen Gaussian along a classical path on one
//! diabatic surface and switches surface at the jumps of a Markov process
//! whose rate is `(δ/ε)|V01(Q)|`. Averaging the trajectory weights over the
//! ensemble reconstructs both wave function components.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the spectral
//! reference solver, and the parallel driver live in the `fgash` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod initial_data;
pub mod potentials;
pub mod reconstruction;
pub mod series_oracle;
pub mod trajectory;

pub use error::{Error, Result};
pub use nalgebra::{SMatrix, SVector};
pub use num_complex::Complex64;

/// Position or momentum in `M` dimensions.
pub type Point<const M: usize> = SVector<f64, M>;
