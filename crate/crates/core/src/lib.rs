//! Triggered doublon emission from an emitter coupled to a nonlinear rhombic
//! chain at pi flux.
//!
//! Modules build on each other bottom-up: `lattice` -> `basis` -> `hamiltonian`
//! -> `spectral` / `dynamics` -> `analytics` -> `scenario`.

pub mod analytics;
pub mod basis;
pub mod dynamics;
pub mod error;
pub mod hamiltonian;
pub mod lattice;
pub mod scenario;
pub mod spectral;

pub use error::{Error, ModelError, Result};
