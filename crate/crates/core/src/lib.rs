//! Simulation and exact analysis of the fitness-weighted contact process on
//! Galton-Watson trees, stars and paths.

pub mod bounds;
pub mod coupling;
pub mod dist;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod gadgets;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod tree;
pub mod verify;
pub mod ychain;

pub use error::{Error, Result};
