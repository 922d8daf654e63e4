//! Magnetic indoor localization toolkit.
//!
//! Regresses 2D position from magnetometer sequences with a dilated
//! convolutional network and quantifies how much rotation-invariant inputs
//! (field magnitude and gravity projection) buy over raw 3-axis inputs when
//! the device orientation is perturbed.
//!
//! Start with the `examples/` directory: each example exercises one major
//! capability end to end.

pub mod data;
pub mod cli;
pub mod error;
pub mod evalkit;
pub mod features;
pub mod geometry;
pub mod magnet;
pub mod numkit;
pub mod perturb;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
