//! Numerical toolkit for gradient-complexity and mean-field questions on the
//! discrete cube {-1,1}^n and on Gaussian space.
//!
//! Vertices of the cube are encoded as integers with little-endian bits: bit
//! `i` set means coordinate `i` equals +1. The same encoding is used by every
//! module and every file format.

pub mod complexity;
pub mod cube;
pub mod error;
pub mod gaussian;
pub mod graphs;
pub mod instances;
pub mod ising;
pub mod ld;
pub mod localization;
pub mod meanfield;
pub mod rng;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
