//! Dense tensors, FFTs and convolution primitives.

pub mod conv;
pub mod fft;
pub mod gemm;
pub mod tensor;

pub use conv::{causal_conv, causal_conv_direct, linear_conv_fft, FFT_CONV_THRESHOLD};
pub use fft::{cached_plan, factorize, fft, ifft, irfft, rfft, Direction, FftMethod, FftPlan};
pub use gemm::{gemm, MatMut, MatRef};
pub use tensor::Tensor;
pub use num_complex::Complex64;
