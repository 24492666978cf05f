//! Experiment harness, result files and plotting for `cnce-core`.

pub mod cli;
pub mod config;
mod error;
pub mod experiment;
pub mod persist;
pub mod report;
pub mod svg;

pub use error::{Error, Result};
