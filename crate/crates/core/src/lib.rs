//! Four-channel RGBD diffusion for depth-estimation data augmentation.
//!
//! The crate covers the whole pipeline at desk scale: a small autodiff
//! engine ([`ndgrad`]), noise schedules, a time-conditioned U-Net denoiser
//! with its DDPM trainer and ancestral sampler, the RGBD data model and
//! container format, a toy encoder–decoder depth estimator with the usual
//! evaluation metrics, and feature-space distances between datasets.
//!
//! Numeric code is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks and oracles); aliases for both are exported below.

pub mod error;
pub mod ndgrad;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = ndgrad::Tensor<f32>;
pub type Tensor64 = ndgrad::Tensor<f64>;
pub type Tape32 = ndgrad::Tape<f32>;
pub type Tape64 = ndgrad::Tape<f64>;

mod binio;
pub mod denoiser;
pub mod diffusion;
pub mod featspace;
pub mod mde;
pub mod nn;
pub mod optim;
pub mod render;
pub mod schedules;
pub mod rgbd;
