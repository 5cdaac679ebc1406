//! Class-specific convolution denoising.
//!
//! A pixel classification network estimates local gradient statistics from
//! a noisy image, a hash quantizer turns them into a class map, and the
//! denoiser's class-specific convolutions pick one kernel per pixel from a
//! filter bank indexed by that map.

pub mod autograd;
pub mod cli;
pub mod csconv;
pub mod error;
pub mod imageio;
pub mod model;
pub mod nn;
pub mod optim;
pub mod network;
pub mod param;
pub mod pcn;
pub mod csdn;
pub mod raster;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
