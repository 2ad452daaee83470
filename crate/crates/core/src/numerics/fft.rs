//! Arbitrary-length complex FFT.
//!
//! Lengths whose prime factors are all small run through a recursive
//! mixed-radix decimation-in-time transform; lengths with a large prime
//! factor fall back to Bluestein's chirp-z algorithm on a power-of-two
//! inner transform.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest prime factor handled by a direct mixed-radix butterfly.
const MAX_RADIX: usize = 61;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FftMethod {
    MixedRadix,
    ChirpZ,
}

#[derive(Debug)]
pub struct FftPlan {
    len: usize,
    direction: Direction,
    kind: PlanKind,
}

#[derive(Debug)]
enum PlanKind {
    MixedRadix {
        factors: Vec<usize>,
        roots: Vec<Complex64>,
    },
    ChirpZ {
        chirp: Vec<Complex64>,
        chirp_spectrum: Vec<Complex64>,
        forward: Box<FftPlan>,
        inverse: Box<FftPlan>,
    },
}

impl FftPlan {
    pub fn new(len: usize, direction: Direction) -> Result<Self> {
        let factors = factorize(len.max(1));
        let method = if factors.iter().all(|&p| p <= MAX_RADIX) {
            FftMethod::MixedRadix
        } else {
            FftMethod::ChirpZ
        };
        Self::with_method(len, direction, method)
    }

    /// Build a plan with an explicit algorithm (chirp-z works for every length).
    pub fn with_method(len: usize, direction: Direction, method: FftMethod) -> Result<Self> {
        if len == 0 {
            return Err(Error::arg("FFT length must be positive"));
        }
        let sign = match direction {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        };
        let kind = match method {
            FftMethod::MixedRadix => {
                let factors = factorize(len);
                if let Some(&p) = factors.iter().find(|&&p| p > MAX_RADIX) {
                    return Err(Error::arg(format!(
                        "length {len} has prime factor {p}, too large for mixed radix"
                    )));
                }
                let roots = (0..len)
                    .map(|i| Complex64::from_polar(1.0, sign * 2.0 * PI * i as f64 / len as f64))
                    .collect();
                PlanKind::MixedRadix { factors, roots }
            }
            FftMethod::ChirpZ => {
                let m = (2 * len - 1).next_power_of_two();
                let two_n = 2 * len as u128;
                // angle uses n^2 mod 2N to keep the phase argument small
                let chirp: Vec<Complex64> = (0..len)
                    .map(|n| {
                        let e = ((n as u128 * n as u128) % two_n) as f64;
                        Complex64::from_polar(1.0, sign * PI * e / len as f64)
                    })
                    .collect();
                let forward = Box::new(FftPlan::with_method(m, Direction::Forward, FftMethod::MixedRadix)?);
                let inverse = Box::new(FftPlan::with_method(m, Direction::Inverse, FftMethod::MixedRadix)?);
                let mut b = vec![Complex64::new(0.0, 0.0); m];
                b[0] = chirp[0].conj();
                for n in 1..len {
                    b[n] = chirp[n].conj();
                    b[m - n] = chirp[n].conj();
                }
                let chirp_spectrum = forward.run(&b);
                PlanKind::ChirpZ { chirp, chirp_spectrum, forward, inverse }
            }
        };
        Ok(Self { len, direction, kind })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn method(&self) -> FftMethod {
        match self.kind {
            PlanKind::MixedRadix { .. } => FftMethod::MixedRadix,
            PlanKind::ChirpZ { .. } => FftMethod::ChirpZ,
        }
    }

    /// Transform `x`. Forward is unnormalized; inverse scales by `1/N`.
    pub fn transform(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.len {
            return Err(Error::arg(format!(
                "FFT input length {} does not match plan length {}",
                x.len(),
                self.len
            )));
        }
        Ok(self.run(x))
    }

    fn run(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = match &self.kind {
            PlanKind::MixedRadix { factors, roots } => {
                let mut out = vec![Complex64::new(0.0, 0.0); self.len];
                let mut scratch = Vec::with_capacity(factors.iter().copied().max().unwrap_or(1));
                mixed_radix(x, 0, 1, &mut out, factors, roots, self.len, &mut scratch);
                out
            }
            PlanKind::ChirpZ { chirp, chirp_spectrum, forward, inverse } => {
                let m = chirp_spectrum.len();
                let mut a = vec![Complex64::new(0.0, 0.0); m];
                for ((ai, xi), wi) in a.iter_mut().zip(x).zip(chirp) {
                    *ai = xi * wi;
                }
                let mut spec = forward.run(&a);
                for (s, b) in spec.iter_mut().zip(chirp_spectrum) {
                    *s *= b;
                }
                let conv = inverse.run(&spec);
                conv[..self.len].iter().zip(chirp).map(|(c, w)| c * w).collect()
            }
        };
        // the chirp-z inner inverse already normalizes by its own length
        if self.direction == Direction::Inverse {
            let scale = 1.0 / self.len as f64;
            for v in &mut out {
                *v *= scale;
            }
        }
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn mixed_radix(
    x: &[Complex64],
    offset: usize,
    stride: usize,
    out: &mut [Complex64],
    factors: &[usize],
    roots: &[Complex64],
    total: usize,
    scratch: &mut Vec<Complex64>,
) {
    let n = out.len();
    if n == 1 {
        out[0] = x[offset];
        return;
    }
    let p = factors[0];
    let m = n / p;
    for r in 0..p {
        mixed_radix(
            x,
            offset + r * stride,
            stride * p,
            &mut out[r * m..(r + 1) * m],
            &factors[1..],
            roots,
            total,
            scratch,
        );
    }
    let step = total / n; // roots[step * e] == W_n^e
    if p == 2 {
        for k in 0..m {
            let t = out[m + k] * roots[step * k];
            let a = out[k];
            out[k] = a + t;
            out[m + k] = a - t;
        }
        return;
    }
    let root_p = total / p; // roots[root_p * e] == W_p^e
    for k in 0..m {
        scratch.clear();
        for r in 0..p {
            scratch.push(out[r * m + k] * roots[(step * r * k) % total]);
        }
        for q in 0..p {
            let mut acc = Complex64::new(0.0, 0.0);
            for (r, t) in scratch.iter().enumerate() {
                acc += t * roots[(root_p * ((r * q) % p)) % total];
            }
            out[q * m + k] = acc;
        }
    }
}

/// Prime factorization in ascending order (1 maps to an empty list).
pub fn factorize(mut n: usize) -> Vec<usize> {
    let mut factors = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            factors.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        factors.push(n);
    }
    factors
}

thread_local! {
    static PLANS: RefCell<HashMap<(usize, Direction), Rc<FftPlan>>> = RefCell::new(HashMap::new());
}

/// Cached plan for the calling thread.
pub fn cached_plan(len: usize, direction: Direction) -> Result<Rc<FftPlan>> {
    PLANS.with(|plans| {
        if let Some(p) = plans.borrow().get(&(len, direction)) {
            return Ok(p.clone());
        }
        let plan = Rc::new(FftPlan::new(len, direction)?);
        plans.borrow_mut().insert((len, direction), plan.clone());
        Ok(plan)
    })
}

pub fn fft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    cached_plan(x.len(), Direction::Forward)?.transform(x)
}

pub fn ifft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    cached_plan(x.len(), Direction::Inverse)?.transform(x)
}

/// Non-negative-frequency half of the DFT of a real frame: `N/2 + 1` bins.
pub fn rfft(frame: &[f64], plan: &FftPlan) -> Result<Vec<Complex64>> {
    if plan.direction() != Direction::Forward {
        return Err(Error::arg("rfft needs a forward plan"));
    }
    let x: Vec<Complex64> = frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut spec = plan.transform(&x)?;
    spec.truncate(frame.len() / 2 + 1);
    Ok(spec)
}

/// Real frame from its `N/2 + 1` non-negative bins, assuming Hermitian symmetry.
/// The imaginary parts of the DC and (even-length) Nyquist bins are ignored.
pub fn irfft(bins: &[Complex64], n: usize) -> Result<Vec<f64>> {
    if bins.len() != n / 2 + 1 {
        return Err(Error::arg(format!(
            "irfft of length {n} needs {} bins, got {}",
            n / 2 + 1,
            bins.len()
        )));
    }
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    full[0] = Complex64::new(bins[0].re, 0.0);
    for k in 1..bins.len() {
        if 2 * k == n {
            full[k] = Complex64::new(bins[k].re, 0.0);
        } else {
            full[k] = bins[k];
            full[n - k] = bins[k].conj();
        }
    }
    Ok(ifft(&full)?.into_iter().map(|c| c.re).collect())
}
