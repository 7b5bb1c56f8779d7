//! File formats, reports and the command-line runner around `sme-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;
pub mod snapshot;
pub mod svg;

pub use error::{Error, Result};
