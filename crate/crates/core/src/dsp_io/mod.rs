//! STFT analysis / WOLA synthesis and WAV file I/O.

mod wav;

use std::io::Write;
use std::rc::Rc;

use num_complex::Complex64;

use crate::autodiff::{OpKind, Var};
use crate::error::{Error, Result};
use crate::numerics::{cached_plan, irfft, rfft, Direction, Tensor};

pub use wav::{wav_read, wav_write, WAV_SAMPLE_RATE};

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::numeric(format!("sample {i} is not finite")));
        }
        if sample_rate == 0 {
            return Err(Error::arg("sample_rate must be positive"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Framing parameters. Bins are `win_length / 2 + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub win_length: usize,
    pub hop: usize,
}

impl StftConfig {
    /// 510-sample periodic Hann window, hop 160 (256 bins at 16 kHz).
    pub const PAPER: StftConfig = StftConfig { win_length: 510, hop: 160 };
    /// Reduced 126/40 framing (64 bins) for quick experiments.
    pub const DESK: StftConfig = StftConfig { win_length: 126, hop: 40 };

    pub fn new(win_length: usize, hop: usize) -> Result<Self> {
        if win_length < 2 || hop == 0 || hop > win_length {
            return Err(Error::arg(format!(
                "need 2 ≤ win_length and 1 ≤ hop ≤ win_length, got win_length={win_length}, hop={hop}"
            )));
        }
        Ok(Self { win_length, hop })
    }

    pub fn n_bins(&self) -> usize {
        self.win_length / 2 + 1
    }

    /// `1 + ⌊(L − win)/hop⌋`, or 0 when the clip is shorter than one window.
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.win_length {
            0
        } else {
            1 + (len - self.win_length) / self.hop
        }
    }

    /// Samples spanned by `frames` frames.
    pub fn span(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.win_length
        }
    }

    /// Periodic Hann window.
    pub fn window(&self) -> Vec<f64> {
        let n = self.win_length as f64;
        (0..self.win_length)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos())
            .collect()
    }

    /// Summed squared window over `frames` frames, with positions whose sum
    /// vanishes checked: only the leading sample may be uncovered.
    fn window_sums(&self, frames: usize) -> Result<Vec<f64>> {
        let w = self.window();
        let mut sums = vec![0.0; self.span(frames)];
        for t in 0..frames {
            for (s, wi) in sums[t * self.hop..].iter_mut().zip(&w) {
                *s += wi * wi;
            }
        }
        if let Some(p) = sums.iter().skip(1).position(|&s| s < 1e-10) {
            return Err(Error::numeric(format!(
                "window sum vanishes at sample {} (win_length={}, hop={})",
                p + 1,
                self.win_length,
                self.hop
            )));
        }
        Ok(sums)
    }
}

/// `[T, F]` complex spectrum held as separate real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self { frames, bins, re: vec![0.0; frames * bins], im: vec![0.0; frames * bins] }
    }

    pub fn at(&self, t: usize, f: usize) -> Complex64 {
        let i = t * self.bins + f;
        Complex64::new(self.re[i], self.im[i])
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            frames: self.frames,
            bins: self.bins,
            re: self.re.iter().map(|v| a * v).collect(),
            im: self.im.iter().map(|v| a * v).collect(),
        }
    }

    /// `[1, 2, T, F]` tensor with real and imaginary channels.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = self.re.clone();
        data.extend_from_slice(&self.im);
        Tensor::new(&[1, 2, self.frames, self.bins], data).expect("non-empty spectrogram")
    }

    /// Inverse of [`Self::to_tensor`] for item `b` of a `[B, 2, T, F]` batch.
    pub fn from_tensor(x: &Tensor, b: usize) -> Result<Self> {
        let (nb, t, f) = match *x.shape() {
            [nb, 2, t, f] => (nb, t, f),
            _ => return Err(Error::arg(format!("expected [B, 2, T, F], got {:?}", x.shape()))),
        };
        if b >= nb {
            return Err(Error::arg(format!("batch index {b} out of range for {nb}")));
        }
        let plane = t * f;
        let base = b * 2 * plane;
        Ok(Self {
            frames: t,
            bins: f,
            re: x.data()[base..base + plane].to_vec(),
            im: x.data()[base + plane..base + 2 * plane].to_vec(),
        })
    }

    /// Stack equal-sized spectrograms into `[B, 2, T, F]`.
    pub fn batch(items: &[ComplexSpectrogram]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::arg("empty spectrogram batch"))?;
        if items.iter().any(|s| s.frames != first.frames || s.bins != first.bins) {
            return Err(Error::arg("spectrograms in a batch must share a shape"));
        }
        let mut data = Vec::with_capacity(items.len() * 2 * first.re.len());
        for s in items {
            data.extend_from_slice(&s.re);
            data.extend_from_slice(&s.im);
        }
        Tensor::new(&[items.len(), 2, first.frames, first.bins], data)
    }

    pub fn all_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }
}

/// Windowed rfft of consecutive frames; no centre padding.
pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    stft_samples(&clip.samples, cfg)
}

pub fn stft_samples(x: &[f64], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let frames = cfg.n_frames(x.len());
    if frames == 0 {
        return Err(Error::arg(format!(
            "clip of {} samples is shorter than one window ({})",
            x.len(),
            cfg.win_length
        )));
    }
    let w = cfg.window();
    let plan = cached_plan(cfg.win_length, Direction::Forward)?;
    let bins = cfg.n_bins();
    let mut spec = ComplexSpectrogram::zeros(frames, bins);
    let mut buf = vec![0.0; cfg.win_length];
    for t in 0..frames {
        let seg = &x[t * cfg.hop..t * cfg.hop + cfg.win_length];
        for ((b, s), wi) in buf.iter_mut().zip(seg).zip(&w) {
            *b = s * wi;
        }
        for (f, c) in rfft(&buf, &plan)?.into_iter().enumerate() {
            spec.re[t * bins + f] = c.re;
            spec.im[t * bins + f] = c.im;
        }
    }
    Ok(spec)
}

/// Weighted overlap-add with the analysis window, normalised by the summed
/// squared window. The output is cut or zero-extended to `out_len`.
pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig, out_len: usize, sample_rate: u32) -> Result<AudioClip> {
    let samples = istft_samples(spec, cfg)?;
    let mut samples = samples;
    samples.resize(out_len, 0.0);
    AudioClip::new(samples, sample_rate)
}

/// As [`istft`], returning exactly `span(frames)` samples.
pub fn istft_samples(spec: &ComplexSpectrogram, cfg: &StftConfig) -> Result<Vec<f64>> {
    if spec.bins != cfg.n_bins() || spec.frames == 0 {
        return Err(Error::arg(format!(
            "spectrogram has {} bins × {} frames; win_length {} needs {} bins",
            spec.bins,
            spec.frames,
            cfg.win_length,
            cfg.n_bins()
        )));
    }
    let sums = cfg.window_sums(spec.frames)?;
    let w = cfg.window();
    let mut out = vec![0.0; sums.len()];
    let mut bins = vec![Complex64::new(0.0, 0.0); spec.bins];
    for t in 0..spec.frames {
        for (f, b) in bins.iter_mut().enumerate() {
            *b = spec.at(t, f);
        }
        let frame = irfft(&bins, cfg.win_length)?;
        for ((o, v), wi) in out[t * cfg.hop..].iter_mut().zip(&frame).zip(&w) {
            *o += v * wi;
        }
    }
    for (o, s) in out.iter_mut().zip(&sums) {
        *o = if *s < 1e-10 { 0.0 } else { *o / s };
    }
    Ok(out)
}

/// Range `[win, (T−1)·hop)` of samples covered by full overlap on both sides.
pub fn interior_range(cfg: &StftConfig, frames: usize) -> std::ops::Range<usize> {
    let end = frames.saturating_sub(1) * cfg.hop;
    cfg.win_length.min(end)..end
}

struct IstftGeom {
    nb: usize,
    frames: usize,
    bins: usize,
    win: usize,
    hop: usize,
    window: Vec<f64>,
    inv_sums: Vec<f64>,
}

impl IstftGeom {
    fn out_len(&self) -> usize {
        (self.frames - 1) * self.hop + self.win
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let plane = self.frames * self.bins;
        let len = self.out_len();
        let mut out = vec![0.0; self.nb * len];
        let mut bins = vec![Complex64::new(0.0, 0.0); self.bins];
        for b in 0..self.nb {
            let (re, im) = (&x[b * 2 * plane..], &x[b * 2 * plane + plane..]);
            let row = &mut out[b * len..(b + 1) * len];
            for t in 0..self.frames {
                for (f, c) in bins.iter_mut().enumerate() {
                    *c = Complex64::new(re[t * self.bins + f], im[t * self.bins + f]);
                }
                let frame = irfft(&bins, self.win)?;
                for ((o, v), wi) in row[t * self.hop..].iter_mut().zip(&frame).zip(&self.window) {
                    *o += v * wi;
                }
            }
            for (o, s) in row.iter_mut().zip(&self.inv_sums) {
                *o *= s;
            }
        }
        Ok(out)
    }

    /// Adjoint of irfft: `∂X_k = (c_k/N)·FFT(g)_k`, `c_k = 1` at DC/Nyquist, else 2.
    fn backward(&self, g: &[f64], gx: &mut [f64]) -> Result<()> {
        let plane = self.frames * self.bins;
        let len = self.out_len();
        let plan = cached_plan(self.win, Direction::Forward)?;
        let n = self.win as f64;
        let mut buf = vec![0.0; self.win];
        for b in 0..self.nb {
            let row = &g[b * len..(b + 1) * len];
            for t in 0..self.frames {
                let start = t * self.hop;
                for (i, v) in buf.iter_mut().enumerate() {
                    *v = row[start + i] * self.inv_sums[start + i] * self.window[i];
                }
                let spec = rfft(&buf, &plan)?;
                for (f, c) in spec.iter().enumerate() {
                    let ck = if f == 0 || 2 * f == self.win { 1.0 } else { 2.0 };
                    gx[b * 2 * plane + t * self.bins + f] += ck / n * c.re;
                    gx[b * 2 * plane + plane + t * self.bins + f] += ck / n * c.im;
                }
            }
        }
        Ok(())
    }
}

/// Differentiable synthesis of `[B, 2, T, F]` spectra into `[B, span(T)]` waveforms.
pub fn istft_on_tape<'t>(x: Var<'t>, cfg: &StftConfig) -> Result<Var<'t>> {
    let value = x.value();
    let (nb, frames, bins) = match *value.shape() {
        [nb, 2, t, f] => (nb, t, f),
        _ => return Err(Error::arg(format!("istft expects [B, 2, T, F], got {:?}", value.shape()))),
    };
    if bins != cfg.n_bins() {
        return Err(Error::arg(format!("istft: {bins} bins but win_length {} needs {}", cfg.win_length, cfg.n_bins())));
    }
    let inv_sums = cfg
        .window_sums(frames)?
        .into_iter()
        .map(|s| if s < 1e-10 { 0.0 } else { 1.0 / s })
        .collect();
    let geom = Rc::new(IstftGeom { nb, frames, bins, win: cfg.win_length, hop: cfg.hop, window: cfg.window(), inv_sums });
    let out = Tensor::new(&[nb, geom.out_len()], geom.forward(value.data())?)?;
    let id = x.id();
    x.tape().record(
        OpKind::Istft,
        &[x],
        out,
        Box::new(move |g, sink| {
            if let Some(buf) = sink.get(id) {
                geom.backward(g.data(), buf.data_mut()).expect("plan valid after forward");
            }
        }),
    )
}

/// One row per frame of `re,im` pairs.
pub fn write_spectrogram_csv<W: Write>(spec: &ComplexSpectrogram, mut out: W) -> Result<()> {
    for t in 0..spec.frames {
        let row: Vec<String> = (0..spec.bins)
            .map(|f| {
                let c = spec.at(t, f);
                format!("{},{}", c.re, c.im)
            })
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
