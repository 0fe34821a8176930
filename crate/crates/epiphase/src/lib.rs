//! File formats, configuration, parallel chain runner and command-line
//! front end for `epiphase-core`.
//!
//! Series come in as CSV ([`series`]), studies and simulation scenarios as
//! TOML ([`config`]); fits are written as versioned result files
//! ([`results`]) with a run manifest ([`manifest`]) beside them.

pub mod cli;
pub mod compare;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;
pub mod results;
pub mod series;
pub mod workflow;

pub use error::{AppError, Result};
