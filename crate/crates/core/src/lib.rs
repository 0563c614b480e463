//! Stochastic Schrödinger equations for open quantum systems: white- and
//! colored-noise unravelings, a lattice-field toy model, and exact
//! system-plus-bath oracles to check them against.

mod engine;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod hilbert;
pub mod markov;
pub mod memory;
pub mod noise;
pub mod oracle;
pub mod trajectory;
pub mod validation;

pub use error::{Error, Result};
