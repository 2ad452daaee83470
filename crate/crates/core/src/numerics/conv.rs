use num_complex::Complex64;

use super::fft::{cached_plan, Direction};
use crate::error::{Error, Result};

/// Causal linear convolution `y[t] = Σ_{j≤t} k[j]·u[t−j]`, truncated to `len(signal)`.
///
/// Zero-pads both operands to a power of two ≥ `Ls + Lk − 1` so the circular
/// product equals the linear one.
pub fn linear_conv_fft(kernel: &[f64], signal: &[f64]) -> Result<Vec<f64>> {
    if kernel.is_empty() || signal.is_empty() {
        return Err(Error::arg("linear_conv_fft needs non-empty kernel and signal"));
    }
    let kernel = &kernel[..kernel.len().min(signal.len())];
    let n = (signal.len() + kernel.len() - 1).next_power_of_two();
    let fwd = cached_plan(n, Direction::Forward)?;
    let inv = cached_plan(n, Direction::Inverse)?;
    let pad = |v: &[f64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (b, &x) in buf.iter_mut().zip(v) {
            b.re = x;
        }
        buf
    };
    let ks = fwd.transform(&pad(kernel))?;
    let mut us = fwd.transform(&pad(signal))?;
    for (u, k) in us.iter_mut().zip(&ks) {
        *u *= k;
    }
    let y = inv.transform(&us)?;
    Ok(y[..signal.len()].iter().map(|c| c.re).collect())
}

/// Signal length above which [`causal_conv`] switches to the FFT path.
pub const FFT_CONV_THRESHOLD: usize = 384;

/// Causal convolution that is direct (and so bit-exactly prefix invariant) up
/// to [`FFT_CONV_THRESHOLD`] samples and FFT-based beyond.
pub fn causal_conv(kernel: &[f64], signal: &[f64]) -> Result<Vec<f64>> {
    if kernel.is_empty() || signal.is_empty() {
        return Err(Error::arg("causal_conv needs non-empty kernel and signal"));
    }
    if signal.len() > FFT_CONV_THRESHOLD {
        linear_conv_fft(kernel, signal)
    } else {
        Ok(causal_conv_direct(kernel, signal))
    }
}

/// Direct O(Lk·Ls) causal convolution with the same truncation as [`linear_conv_fft`].
pub fn causal_conv_direct(kernel: &[f64], signal: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; signal.len()];
    for (j, &k) in kernel.iter().enumerate().take(signal.len()) {
        if k == 0.0 {
            continue;
        }
        for (yt, &u) in y[j..].iter_mut().zip(signal) {
            *yt += k * u;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let u = vec![0.3, -1.0, 2.5, 4.0];
        let y = linear_conv_fft(&[1.0], &u).unwrap();
        for (a, b) in y.iter().zip(&u) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn two_tap_box() {
        let y = linear_conv_fft(&[1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in y.iter().zip([1.0, 3.0, 5.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(linear_conv_fft(&[], &[1.0]).is_err());
        assert!(linear_conv_fft(&[1.0], &[]).is_err());
    }
}
