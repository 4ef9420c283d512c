//! Plane-wave solvers for the periodic Thomas–Fermi–von Weizsäcker model,
//! its crystal-with-defect formulation and the jellium linearization.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod coulomb;
pub mod crystal;
pub mod error;
pub mod experiment;
mod fft;
pub mod field;
pub mod functional;
pub mod jellium;
pub mod lattice;
pub mod minimize;
pub mod model;
pub mod quadrature;
pub mod random;
pub mod validate;

pub use error::{DomainError, FieldError, LatticeError, ModelError, SolveError};
pub use field::{periodic_convolve, restrict_to_cell, GridFunction, Spectrum};
pub use lattice::Lattice;
pub use model::{Gaussian, NuclearModel};
