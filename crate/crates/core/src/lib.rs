//! Finite-difference discretization of the variable-order fractional Laplacian
//! with a low-rank fast apply, Krylov solvers and analytic reference values.

pub mod error;
pub mod experiment;
pub mod expr;
pub mod fft;
pub mod grid;
pub mod lowrank;
pub mod operator;
pub mod oracle;
pub mod solver;
pub mod weights;

pub use error::{Error, Result};
