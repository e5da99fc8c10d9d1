//! Underwater acoustic analysis: audio ingestion, spectrogram front end,
//! a small neural-network substrate, and the denoising, vessel
//! classification and novelty detection models built on it.

pub mod audio;
pub mod classifier;
pub mod denoiser;
pub mod detector;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Network32 = nn::Network<f32>;
pub type Network64 = nn::Network<f64>;
pub type Spectrogram32 = dsp::Spectrogram<f32>;
pub type Spectrogram64 = dsp::Spectrogram<f64>;
