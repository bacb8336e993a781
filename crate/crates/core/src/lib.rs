//! Unified-transform solver for the one-dimensional Guyer-Krumhansl heat
//! conduction system on a finite interval, with residue-series and
//! finite-difference reference solvers.

pub mod error;
pub mod contour;
pub mod gk;
pub mod transforms;
pub mod solver;
pub mod series;
pub mod fd;
pub mod config;
pub mod run;

pub use error::{Error, Result};
