//! Physics-informed neural network engine for shear-driven melt-pool flow.
//!
//! The crate predicts velocity and pressure of a half-disk melt-pool
//! cross-section from temperature data alone (forward mode), infers the
//! Reynolds and Peclet numbers from temperature and velocity data (inverse
//! mode), and ships the projection-method CFD solver that produces the
//! ground truth both modes are checked against.

pub mod activation;
pub mod dataset;
pub mod difftape;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod losses;
pub mod network;
pub mod physics;
pub mod training;
pub mod refsolver;

pub use error::{Error, Result};
