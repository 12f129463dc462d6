//! Operator surface for the affordance-guided policy: demo collection,
//! training, evaluation, ablations and spatial-generalization plots.

pub mod commands;
pub mod config;
pub mod error;
pub mod protocol;
pub mod report;

pub use config::{RawConfig, RunConfig};
pub use error::CliError;
