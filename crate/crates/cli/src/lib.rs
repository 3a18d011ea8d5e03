//! Command-line driver for `tor-core`: single evaluations, matrix
//! generation, distributed runs and the complexity, scaling and fidelity
//! experiments.

pub mod error;
pub mod experiments;
pub mod report;

pub use error::CliError;
