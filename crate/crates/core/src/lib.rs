//! Landslide hazard modelling: a deep joint occurrence/size regression with
//! an extended generalised Pareto size law, trigger return levels, and
//! hypothesised hazard surfaces.

pub mod ascent;
pub mod data;
pub mod egpd;
pub mod error;
pub mod evaluation;
pub mod frequency;
pub mod hazard;
pub mod linalg;
pub mod model;
pub mod network;
pub mod quad;
pub mod seed;
pub mod training;

pub use error::{HazardError, Result};
