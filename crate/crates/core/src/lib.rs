//! Continuous-variable quantum state tomography by constrained least squares.
//!
//! Measurement data `b` and a set of measurement operators `Pi_k` are turned
//! into a linear model `A vec(rho) = b`, which is solved for the density
//! matrix closest in the least-squares sense over the set of physical states
//! (positive semidefinite, unit trace).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assemble;
pub mod cli;
pub mod codec;
pub mod error;
pub mod fockspace;
pub mod linalg;
pub mod metrics;
pub mod povm;
pub mod quadrature;
pub mod simulate;
pub mod solver;

pub use error::{Error, Result};
pub use fockspace::{DensityMatrix, FockDim, HermitianOperator, StateVector};
pub use num_complex::Complex64;
