//! Numerical workbench for Ornstein-Zernike asymptotics of random-path models.
//!
//! Self-avoiding walks, Bernoulli percolation and the Ising model are
//! expressed through path weights; the connection paths are cut into
//! irreducible pieces whose tilted weights drive renewal, shape and
//! fluctuation computations.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod decomposition;
pub mod error;
pub mod fluct;
pub mod io;
pub mod ising;
pub mod lattice;
pub mod norm;
pub mod percolation;
pub mod renewal;
pub mod saw;
pub mod spectral;
pub mod stats;
pub mod tables;

pub use budget::Budget;
pub use error::{OzError, Result};
pub use lattice::{Path, Point};
