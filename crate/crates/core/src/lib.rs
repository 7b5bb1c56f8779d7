//! Differentiable building blocks for tiny-object detection.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every numeric piece of
//! the detector: a small dense tensor engine with hand-written backward
//! passes, Gaussian box geometry with the normalized Wasserstein loss, the
//! multi-scale focused attention block, the upsampling convolution block, a
//! compact anchor-free detector with its training loop, detection metrics and
//! the synthetic PCB-defect renderer. File formats and the command-line
//! runner live in the `sme-tools` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod detector;
pub mod error;
pub mod eucb;
pub mod flops;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod msfa;
pub mod params;
pub mod real;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{FeatureMap, Shape4};
