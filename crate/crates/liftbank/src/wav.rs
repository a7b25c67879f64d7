//! Mono 16-bit PCM WAV files.

use std::path::Path;

use liftbank_core::Tensor;

use crate::CliError;

const FULL_SCALE: f64 = 32768.0;

#[derive(Clone, Debug, PartialEq)]
pub struct WavClip {
    /// Samples in [-1, 1].
    pub samples: Tensor,
    pub sample_rate: u32,
}

fn wav_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

pub fn read_wav(path: &Path) -> Result<WavClip, CliError> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(
            path,
            format!("mono required, found {} channels", spec.channels),
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(wav_err(path, "16-bit PCM required"));
    }
    if spec.sample_rate == 0 {
        return Err(wav_err(path, "sample rate must be positive"));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e))?;
    Ok(WavClip {
        samples: Tensor::from_vec(samples),
        sample_rate: spec.sample_rate,
    })
}

/// Values outside [-1, 1] are clamped.
pub fn write_wav(clip: &WavClip, path: &Path) -> Result<(), CliError> {
    if clip.sample_rate == 0 {
        return Err(wav_err(path, "sample rate must be positive"));
    }
    if !clip.samples.all_finite() {
        return Err(wav_err(path, "samples must be finite"));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &v in clip.samples.data() {
        let q = (v.clamp(-1.0, 1.0) * FULL_SCALE)
            .round()
            .clamp(i16::MIN as f64, i16::MAX as f64);
        w.write_sample(q as i16).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}
