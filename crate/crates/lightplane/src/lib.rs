//! IO, file formats, multi-threaded drivers, benchmarking, gradient
//! checking and single-scene fitting around the `lightplane-core` kernels.

pub use lightplane_core as core;

pub mod bench;
pub mod error;
pub mod fixtures;
pub mod formats;
pub mod gradcheck;
pub mod parallel;
pub mod scenefit;

pub use error::{Error, Result};
