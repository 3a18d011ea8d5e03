//! Exact Torontonian evaluation for Gaussian boson sampling with threshold
//! detectors.
//!
//! The crate provides a brute-force evaluator and a recursive evaluator that
//! reuses Cholesky factors between neighbouring subsets, plus FLO
//! accounting, shared-memory and distributed execution, double-double
//! arithmetic and generators for valid input matrices.

pub mod ddreal;
pub mod flo;
pub mod gbsgen;
pub mod linalg;
pub mod parallel;
pub mod tormat;
pub mod torontonian;
pub mod worksharing;

pub use ddreal::{DDComplex, DDReal};
pub use flo::FloCounter;
pub use linalg::{ComplexMatrix, SquareMatrix};
pub use num_complex::Complex64;
pub use torontonian::{
    tor_naive, tor_recursive, CholeskyPrecision, EvalOptions, ModeList, TorError, TorResult,
};
