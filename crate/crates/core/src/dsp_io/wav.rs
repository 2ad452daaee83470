use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{Error, Result};

pub const WAV_SAMPLE_RATE: u32 = 16_000;

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::format(format!("{}: {other}", path.display())),
    }
}

/// Read 16-bit PCM mono 16 kHz audio scaled by `1/32768`.
pub fn wav_read(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let field = |what: String| Error::format(format!("{}: {what} unsupported", path.display()));
    if spec.channels != 1 {
        return Err(field(format!("channels={}", spec.channels)));
    }
    if spec.sample_format != SampleFormat::Int {
        return Err(field("sample_format=float".into()));
    }
    if spec.bits_per_sample != 16 {
        return Err(field(format!("bits_per_sample={}", spec.bits_per_sample)));
    }
    if spec.sample_rate != WAV_SAMPLE_RATE {
        return Err(field(format!("sample_rate={}", spec.sample_rate)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| map_hound(path, e))?;
    AudioClip::new(samples, spec.sample_rate)
}

/// Write as 16-bit PCM with saturating rounding.
pub fn wav_write(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &clip.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q).map_err(|e| map_hound(path, e))?;
    }
    w.finalize().map_err(|e| map_hound(path, e))
}
