//! Neural-network surrogates for molecular collective variables.
//!
//! The crate trains small feed-forward networks that map Cartesian
//! coordinates to a collective variable, differentiates them in reverse mode
//! to obtain the CV Jacobian, validates those Jacobians against closed-form
//! ones, and feeds them into the metadynamics bias force, the metric tensor
//! and the instantaneous collective force.

pub mod cli;
pub mod cv;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod free_energy;
pub mod geometry;
pub mod surrogate;
pub mod training;

pub use cv::{CoordinationCv, CvFunction, CvKind, DistanceCv};
pub use error::{Error, Result};
pub use geometry::{Configuration, SimBox};
pub use surrogate::{Mlp, MlpSpec, Mode, OutputActivation};
