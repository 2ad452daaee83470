//! Synthetic speech, noise and room responses, plus seeded dynamic mixing.
//!
//! Every mixture is a pure function of `(seed, epoch, index)`, so epochs can
//! be regenerated on demand and generation parallelises trivially.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp_io::{wav_read, AudioClip, WAV_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::numerics::linear_conv_fft;

/// Reverberation times drawn for synthetic rooms, in seconds.
pub const T60_CHOICES: [f64; 6] = [0.16, 0.3, 0.36, 0.6, 0.61, 0.7];

/// Probability that a training mixture is reverberant.
pub const REVERB_PROB: f64 = 0.75;

/// Mixing SNR bounds in dB.
pub const SNR_RANGE: (f64, f64) = (-5.0, 20.0);

/// Amplitude of the diffuse tail relative to the unit direct path.
pub const RIR_TAIL_GAIN: f64 = 0.1;

const PEAK: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
}

impl NoiseKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "pink" => Ok(NoiseKind::Pink),
            _ => Err(Error::arg(format!("noise kind `{s}` (expected white|pink)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
        }
    }
}

/// Harmonic speech surrogate parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub duration: f64,
    pub f0_range: (f64, f64),
    pub n_harmonics: usize,
    /// Relative f0 excursion, e.g. 0.03 for ±3 %.
    pub vibrato_depth: f64,
    pub vibrato_rate: f64,
    pub noise: NoiseKind,
    pub seed: u64,
    pub sample_rate: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration: 1.0,
            f0_range: (80.0, 300.0),
            n_harmonics: 20,
            vibrato_depth: 0.03,
            vibrato_rate: 5.0,
            noise: NoiseKind::White,
            seed: 0,
            sample_rate: WAV_SAMPLE_RATE,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::arg(format!("duration={} must be positive", self.duration)));
        }
        let (lo, hi) = self.f0_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::arg(format!("f0_range=({lo}, {hi}) must satisfy 0 < lo <= hi")));
        }
        if self.n_harmonics == 0 {
            return Err(Error::arg("n_harmonics must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.vibrato_depth) || !(self.vibrato_rate >= 0.0) {
            return Err(Error::arg("vibrato_depth must lie in [0, 1) and vibrato_rate be >= 0"));
        }
        let top = hi * (1.0 + self.vibrato_depth) * self.n_harmonics as f64;
        let nyquist = self.sample_rate as f64 / 2.0;
        if top >= nyquist {
            return Err(Error::arg(format!(
                "highest harmonic {top:.1} Hz reaches Nyquist {nyquist} Hz (aliasing)"
            )));
        }
        Ok(())
    }

    fn samples(&self) -> usize {
        ((self.duration * self.sample_rate as f64).round() as usize).max(1)
    }
}

/// Sum of `1/k`-weighted harmonics of a vibrato-modulated f0 under a slow
/// syllabic envelope, peak-normalised to 0.9.
pub fn synth_speech(cfg: &SynthConfig) -> Result<AudioClip> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.f0_range;
    let f0 = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let env_rate = rng.gen_range(2.0..5.0);
    let env_phase = rng.gen_range(0.0..2.0 * PI);
    let phases: Vec<f64> = (0..cfg.n_harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let sr = cfg.sample_rate as f64;
    let n = cfg.samples();
    let mut theta = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let env = 0.6 + 0.4 * (2.0 * PI * env_rate * t + env_phase).sin();
        let v: f64 = phases.iter().enumerate().map(|(k, p)| ((k + 1) as f64 * theta + p).sin() / (k + 1) as f64).sum();
        out.push(env * v);
        let f = f0 * (1.0 + cfg.vibrato_depth * (2.0 * PI * cfg.vibrato_rate * t + vib_phase).sin());
        theta += 2.0 * PI * f / sr;
    }
    normalize_peak(&mut out, PEAK)?;
    AudioClip::new(out, cfg.sample_rate)
}

fn normalize_peak(x: &mut [f64], peak: f64) -> Result<()> {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return Err(Error::numeric("cannot peak-normalise a silent signal"));
    }
    x.iter_mut().for_each(|v| *v *= peak / m);
    Ok(())
}

/// Unit-RMS noise of the given colour.
pub fn synth_noise(kind: NoiseKind, len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut x: Vec<f64> = match kind {
        NoiseKind::White => (0..len).map(|_| w()).collect(),
        NoiseKind::Pink => {
            // Kellet's three-pole approximation of a 1/f slope
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            (0..len)
                .map(|_| {
                    let v = w();
                    b0 = 0.99765 * b0 + v * 0.0990460;
                    b1 = 0.96300 * b1 + v * 0.2965164;
                    b2 = 0.57000 * b2 + v * 1.0526913;
                    b0 + b1 + b2 + v * 0.1848
                })
                .collect()
        }
    };
    let rms = power(&x).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

/// Exponentially decaying Gaussian tail behind a unit direct-path tap.
///
/// The amplitude envelope is `exp(−6.9·t/t60)`, so energy falls 60 dB by `t60`.
pub fn synth_rir(t60: f64, seed: u64, sample_rate: u32) -> Result<Vec<f64>> {
    if !(t60 > 0.0 && t60.is_finite()) {
        return Err(Error::arg(format!("t60={t60} must be positive")));
    }
    let sr = sample_rate as f64;
    let len = ((1.2 * t60 * sr).ceil() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = Vec::with_capacity(len);
    h.push(1.0);
    for n in 1..len {
        let g: f64 = StandardNormal.sample(&mut rng);
        h.push(RIR_TAIL_GAIN * (-6.9 * n as f64 / (sr * t60)).exp() * g);
    }
    Ok(h)
}

/// Causal convolution with a room response, truncated to the input length.
pub fn reverberate(clip: &AudioClip, rir: &[f64]) -> Result<AudioClip> {
    AudioClip::new(linear_conv_fft(rir, &clip.samples)?, clip.sample_rate)
}

/// Which clean signal serves as the learning target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// The speech component actually present in the mixture.
    Reverberant,
    /// The speech before any room response.
    Dry,
}

impl Target {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "reverberant" => Ok(Target::Reverberant),
            "dry" => Ok(Target::Dry),
            _ => Err(Error::arg(format!("target `{s}` (expected reverberant|dry)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Reverberant => "reverberant",
            Target::Dry => "dry",
        }
    }
}

/// A noisy mixture with its speech component (`clean`) and pre-room speech (`dry`).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    pub clean: AudioClip,
    pub noisy: AudioClip,
    pub dry: AudioClip,
    pub snr_db: f64,
    pub reverberant: bool,
}

impl MixtureSample {
    pub fn target(&self, which: Target) -> &AudioClip {
        match which {
            Target::Reverberant => &self.clean,
            Target::Dry => &self.dry,
        }
    }
}

pub(crate) fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Scales `noise` so the clean-to-noise power ratio is `snr_db`, then adds it.
///
/// If the mixture clips, clean and noisy are rescaled jointly so the realised
/// SNR is unchanged.
pub fn mix_at_snr(clean: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<MixtureSample> {
    mix_with_gain(clean, noise, snr_db).map(|(m, _)| m)
}

/// As [`mix_at_snr`], also returning the joint renormalisation factor.
fn mix_with_gain(clean: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<(MixtureSample, f64)> {
    if !snr_db.is_finite() {
        return Err(Error::arg(format!("snr_db={snr_db} must be finite")));
    }
    if clean.len() != noise.len() || clean.is_empty() {
        return Err(Error::arg(format!("clean has {} samples, noise {}", clean.len(), noise.len())));
    }
    let pc = power(&clean.samples);
    let pn = power(&noise.samples);
    if pc == 0.0 {
        return Err(Error::arg("clean signal has zero power"));
    }
    if pn == 0.0 {
        return Err(Error::arg("noise signal has zero power"));
    }
    let g = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut s = clean.samples.clone();
    let mut y: Vec<f64> = s.iter().zip(&noise.samples).map(|(c, n)| c + g * n).collect();
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if peak > 1.0 {
        for v in s.iter_mut().chain(y.iter_mut()) {
            *v /= peak;
        }
    }
    let clean = AudioClip::new(s, clean.sample_rate)?;
    let sample = MixtureSample {
        dry: clean.clone(),
        noisy: AudioClip::new(y, clean.sample_rate)?,
        clean,
        snr_db,
        reverberant: false,
    };
    Ok((sample, scale))
}

/// Source of clean speech.
#[derive(Debug, Clone)]
pub enum CleanPool {
    /// Fresh harmonic speech per draw; the template's seed is ignored.
    Synthetic(SynthConfig),
    Clips(Vec<AudioClip>),
}

/// Source of additive noise.
#[derive(Debug, Clone)]
pub enum NoisePool {
    Synthetic(NoiseKind),
    Clips(Vec<AudioClip>),
}

/// Mixing recipe shared by every draw.
#[derive(Debug, Clone, PartialEq)]
pub struct MixConfig {
    pub clip_samples: usize,
    pub sample_rate: u32,
    pub reverb_prob: f64,
    pub snr_range: (f64, f64),
    pub target: Target,
}

impl MixConfig {
    pub fn new(clip_seconds: f64) -> Result<Self> {
        if !(clip_seconds > 0.0) {
            return Err(Error::arg(format!("clip length {clip_seconds} s must be positive")));
        }
        Ok(Self {
            clip_samples: (clip_seconds * WAV_SAMPLE_RATE as f64).round() as usize,
            sample_rate: WAV_SAMPLE_RATE,
            reverb_prob: REVERB_PROB,
            snr_range: SNR_RANGE,
            target: Target::Reverberant,
        })
    }
}

/// The random choices behind one mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixPlan {
    pub reverberant: bool,
    pub t60: f64,
    pub snr_db: f64,
    pub speech_seed: u64,
    pub noise_seed: u64,
    pub rir_seed: u64,
}

/// Independent generator for `(seed, epoch, index)`.
pub fn sample_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&epoch.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(b"sicrnmix");
    ChaCha8Rng::from_seed(key)
}

pub fn draw_plan(mix: &MixConfig, rng: &mut impl Rng) -> MixPlan {
    MixPlan {
        reverberant: rng.gen_bool(mix.reverb_prob),
        t60: T60_CHOICES[rng.gen_range(0..T60_CHOICES.len())],
        snr_db: rng.gen_range(mix.snr_range.0..mix.snr_range.1),
        speech_seed: rng.gen(),
        noise_seed: rng.gen(),
        rir_seed: rng.gen(),
    }
}

fn segment(pool: &[AudioClip], len: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Err(Error::arg("empty clip pool"));
    }
    let clip = &pool[rng.gen_range(0..pool.len())];
    if clip.is_empty() {
        return Err(Error::arg("pool contains an empty clip"));
    }
    let start = if clip.len() > len { rng.gen_range(0..=clip.len() - len) } else { 0 };
    Ok(clip.samples.iter().cycle().skip(start).take(len).copied().collect())
}

/// Builds mixture `index` of `epoch`; a pure function of its arguments.
pub fn draw_sample(
    clean: &CleanPool,
    noise: &NoisePool,
    mix: &MixConfig,
    seed: u64,
    epoch: u64,
    index: u64,
) -> Result<MixtureSample> {
    let mut rng = sample_rng(seed, epoch, index);
    let plan = draw_plan(mix, &mut rng);
    let len = mix.clip_samples;
    let speech = match clean {
        CleanPool::Synthetic(tpl) => {
            let cfg = SynthConfig {
                duration: len as f64 / mix.sample_rate as f64,
                seed: plan.speech_seed,
                sample_rate: mix.sample_rate,
                ..tpl.clone()
            };
            let mut s = synth_speech(&cfg)?;
            s.samples.resize(len, 0.0);
            s
        }
        CleanPool::Clips(pool) => {
            AudioClip::new(segment(pool, len, &mut ChaCha8Rng::seed_from_u64(plan.speech_seed))?, mix.sample_rate)?
        }
    };
    let noise = match noise {
        NoisePool::Synthetic(kind) => synth_noise(*kind, len, plan.noise_seed),
        NoisePool::Clips(pool) => segment(pool, len, &mut ChaCha8Rng::seed_from_u64(plan.noise_seed))?,
    };
    let noise = AudioClip::new(noise, mix.sample_rate)?;
    let wet = if plan.reverberant {
        reverberate(&speech, &synth_rir(plan.t60, plan.rir_seed, mix.sample_rate)?)?
    } else {
        speech.clone()
    };
    let (mut sample, scale) = mix_with_gain(&wet, &noise, plan.snr_db)?;
    sample.dry = AudioClip::new(speech.samples.iter().map(|v| v * scale).collect(), mix.sample_rate)?;
    sample.reverberant = plan.reverberant;
    Ok(sample)
}

/// `count` fresh mixtures for `epoch`.
pub fn dynamic_mix_epoch<'a>(
    clean: &'a CleanPool,
    noise: &'a NoisePool,
    mix: &'a MixConfig,
    seed: u64,
    epoch: u64,
    count: usize,
) -> impl Iterator<Item = Result<MixtureSample>> + 'a {
    (0..count as u64).map(move |i| draw_sample(clean, noise, mix, seed, epoch, i))
}

/// Reads `dir/clean/*.wav` and `dir/noise/*.wav` in file-name order.
pub fn load_data_dir(dir: &Path) -> Result<(Vec<AudioClip>, Vec<AudioClip>)> {
    let read = |sub: &str| -> Result<Vec<AudioClip>> {
        let path = dir.join(sub);
        let mut files: Vec<_> = std::fs::read_dir(&path)
            .map_err(|e| Error::arg(format!("{}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::arg(format!("no .wav files in {}", path.display())));
        }
        files.iter().map(|p| wav_read(p)).collect()
    };
    Ok((read("clean")?, read("noise")?))
}
