//! Pan-sharpening toolkit: fuses a high-resolution panchromatic image with a
//! low-resolution multispectral image by solving a quadratic variational
//! model whose gradient targets come from a small residual network.

pub mod error;
pub mod gradnet;
pub mod baselines;
pub mod harness;
pub mod metrics;
pub mod operators;
pub mod raster;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
