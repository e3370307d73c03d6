//! Progressive multi-objective search over sequential model-compression schemes.

pub mod catalog;
pub mod cli;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod kg;
pub mod rng;
pub mod search;

pub use error::{Error, Result};
