pub mod error;
pub mod descriptor;
pub mod geometry;
pub mod nn;
pub mod env;
pub mod sampler;
pub mod affordance;

pub use error::{Error, Result};
pub mod policy;
