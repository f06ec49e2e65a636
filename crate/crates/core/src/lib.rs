//! Signal correlation functions of continuously monitored open quantum systems.
//!
//! The crate evaluates exact N-point correlators of homodyne-type measurement
//! records (with detector inefficiency and amplifier filtering), simulates the
//! stochastic trajectories that produce those records, estimates correlators
//! from simulated data and fits model parameters to measured curves.
//!
//! Operators are dense `d x d` complex matrices. Superoperators act on
//! column-stacked vectorizations, see [`densemath::vec`].

pub mod calibrate;
pub mod densemath;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod filters;
pub mod io;
pub mod model;
pub mod reference;
pub mod trajectories;

pub use error::{Error, ErrorCategory, Result};
pub use model::{MeasurementChannel, Operator, SuperOperator, SystemModel};
