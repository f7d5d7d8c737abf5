//! Multi-scale deep compressive sensing codec.
//!
//! Images are decomposed by a one-level Haar wavelet transform and sampled
//! block by block across all four bands with a learned linear operator. A
//! learned linear map recovers an initial image at full resolution, and two
//! convolutional enhancement stages refine it. Sampling and reconstruction
//! are trained jointly in three phases.

pub mod codec;
pub mod config;
pub mod error;
pub mod eval;
pub mod format;
pub mod gradcheck;
pub mod image;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use image::GrayImage;
pub use network::{ModelParams, NetConfig, Phase, SamplingConfig};
pub use tensor::{Shape, Tensor};
