//! Stability of single-layer graph convolutional networks under small edge
//! perturbations, analysed through first-order Laplacian perturbation theory.

pub mod bounds;
pub mod config;
pub mod error;
pub mod experiments;
pub mod gcn;
pub mod graph;
pub mod manifest;
pub mod random;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
