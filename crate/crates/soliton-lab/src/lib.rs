//! Numerical laboratory for the codimension-one centre-stable manifold of the
//! focusing cubic NLS in three dimensions.
//!
//! The crate builds the moving-soliton background, the linearized matrix
//! Hamiltonian with its root space and exponential pair, the modulation
//! equations, a split-step evolver for both the full flow and the linearized
//! flow, and the probe machinery that classifies perturbed initial data on
//! either side of the manifold.

pub mod banded;
pub mod field;
pub mod error;
pub mod grid;
pub mod hamiltonian;
pub mod nullspace;
pub mod radial;
pub mod soliton;
pub mod spectral;

pub use error::{Error, Result};
