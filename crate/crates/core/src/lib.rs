//! Numerical study of critical sets for divergence-form elliptic equations
//! with rapidly oscillating periodic coefficients.
//!
//! The crate is organised around five modules:
//!
//! - [`cell`]: periodic cell problems, correctors, the homogenized matrix and
//!   the normalizing change of variables.
//! - [`solver`]: Dirichlet problems on balls, harmonic comparison solutions and
//!   the harmonic approximant with measured errors.
//! - [`spectra`]: sphere quadrature, spherical-harmonic expansions, doubling
//!   indices, frequencies, Weiss functionals and turning distances.
//! - [`geometry`]: critical point detection, minimal radii, almost-invariant
//!   subspaces, covers and tube volumes.
//! - [`harness`]: experiment configuration, suites and report emission.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::type_complexity, clippy::needless_range_loop, clippy::len_without_is_empty)]

pub mod cell;
pub mod error;
pub mod field;
pub mod geometry;
pub mod harmonics;
pub mod harness;
pub mod linalg;
pub mod poly;
pub mod quadrature;
pub mod solver;
pub mod spectra;
pub mod tolerances;

pub use error::{Error, Result};
pub use field::ScalarField;
pub use nalgebra::{Matrix3, Vector3};
