//! Causal speech enhancement with state-space and inplace-convolution blocks.
//!
//! The crate is organised bottom-up: [`numerics`] (tensors, FFT), [`autodiff`]
//! (reverse-mode tape), [`ssm`] and [`s4nd`] (state-space kernels), [`blocks`]
//! and [`model`] (network), [`dsp_io`] (STFT, WAV), [`data`] (synthetic
//! mixtures) and [`training`] (loss, optimizer, loop).

pub mod autodiff;
pub mod blocks;
pub mod data;
pub mod dsp_io;
pub mod error;
pub mod model;
pub mod numerics;
pub mod s4nd;
pub mod ssm;
pub mod training;

pub use error::{Error, Result};
