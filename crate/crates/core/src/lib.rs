//! Numerical laboratory for the barotropic compressible Navier-Stokes system,
//! its Brenner and artificial-pressure regularizations, empirical Young
//! measures generated by solution families, and relative-energy stability
//! experiments.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod mesh;
pub mod output;
pub mod pressure;
pub mod quadrature;
pub mod reference;
pub mod relative_energy;
pub mod solver;
pub mod young_measure;

pub use error::{Error, Result};
