//! Quantum state tomography from informationally complete POVM statistics
//! with generative models.

pub mod dense;
pub mod distribution;
pub mod error;
pub mod estimation;
pub mod models;
pub mod povm;
pub mod reconstruction;
pub mod harness;
pub mod tn;

pub use error::{Error, Result};
