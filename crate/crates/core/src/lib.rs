//! Spatial-temporal adaptive video recognition.
//!
//! A light global encoder glances at a downscaled video, a policy head places
//! a sequence of small 3D cubes, a heavier local encoder processes the cubes
//! one at a time, and a pooling classifier emits a prediction after each
//! cube. Inference stops as soon as the prediction entropy falls below a
//! per-step threshold solved for a mult-add budget.
//!
//! The crate is `no_std` + `alloc`; file formats and the command line live in
//! the companion `adafocus` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cost;
pub mod crop;
pub mod diff;
pub mod earlyexit;
mod error;
pub mod model;
pub mod synth;

pub use error::{Error, Result};
