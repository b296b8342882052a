//! File formats, dataset directories, gradient checks and subcommands of the
//! `adafocus` command-line tool.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
mod error;
pub mod formats;
pub mod gradcheck;
pub mod manifest;
pub mod tensor_io;

pub use error::{Error, Result};
