//! Simulation and numerical toolkit for a one-dimensional energy-conserving
//! nongradient lattice model.
//!
//! The chain carries velocities `p_x`; neighbouring pairs exchange energy by
//! random rotations whose rate is modulated by a coupling `a(p_x, p_{x+1})`.

pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod fluctuation;
pub mod model;
pub mod polynomial;
pub mod quadrature;
pub mod rng;
pub mod spectral;
pub mod sphere;
pub mod stats;
pub mod variational;

pub use coupling::{Coupling, CouplingSpec};
pub use error::{Error, Result};
pub use model::{ModelParams, Observable, Topology, VelocityField};
pub use polynomial::{Monomial, Polynomial};
pub use stats::{Estimate, StatSeries};
