//! File formats, training and evaluation pipelines, and the `geo` command
//! line on top of `georank-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;

pub use error::{Error, Result};
