//! Teacher-student motion adaptation for video object segmentation.
//!
//! A two-stream teacher (appearance + optical flow) labels the first frames of
//! a demonstration video; those pseudo-labels fine-tune an appearance-only
//! student which then segments the demonstrated object in new scenes.

pub mod adapt;
pub mod config;
pub mod error;
pub mod flowio;
pub mod maps;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod pseudolabel;
pub mod segnet;
pub mod synthgen;
pub mod tensor;

#[cfg(test)]
#[path = "../tests/support/oracles.rs"]
pub(crate) mod oracles;

pub use error::{Error, ErrorClass, Result};
