pub mod carleman;
pub mod cli;
pub mod cgo;
pub mod config;
pub mod discretization;
pub mod dnmap;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod numerics;

pub use error::{LabError, Result};
pub mod joperators;
pub mod operators;
#[cfg(test)]
mod properties;
pub mod potentials;
pub mod sph3;
pub mod uniqueness;
