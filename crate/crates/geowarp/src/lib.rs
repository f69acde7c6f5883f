//! File formats, checkpoints, run configuration and the command-line
//! pipeline on top of `geowarp-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;

pub use error::{Error, Result};
