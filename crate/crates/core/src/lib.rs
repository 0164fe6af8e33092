//! Wavelet-homogenized GAN generators on a small CPU tensor toolkit.
//!
//! * [`wavelet`]: Mexican-hat wavelet, sampled filter banks, "same" correlation.
//! * [`wavelet_deconv`]: the learnable multi-scale filtering + averaging layer.
//! * [`nn`] / [`tensor`]: layers with explicit backward passes, Adam, spectral norm.
//! * [`gan`]: generator/discriminator builders, losses and the training loop.
//! * [`fid`]: frozen feature extractor, Gaussian fitting and the Fréchet distance.
//! * [`data`]: IDX and synthetic datasets, image grids, checkpoints, config, metrics.

#[cfg(feature = "cli")]
pub mod cli;
pub mod data;
pub mod error;
pub mod fid;
pub mod gan;
pub mod gradcheck;
pub mod nn;
pub mod tensor;
pub mod wavelet;
pub mod wavelet_deconv;

pub use error::{Error, Result};
pub use tensor::Tensor;
