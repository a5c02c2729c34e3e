//! Block-pushing worlds with compositional splits, and a slot world model
//! that selects modular rules by attending over grounded symbols.

pub mod dataset;
pub mod env;
pub mod error;
pub mod metrics;
pub mod perception;
pub mod planner;
pub mod splits;
pub mod symbols;
pub mod training;
pub mod transition;

pub use error::{Error, Result};
