pub mod cli;
pub mod diff;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod reciprocative;
pub mod tracker;

pub use error::{Error, Result};
