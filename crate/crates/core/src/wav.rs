//! 16-bit mono PCM WAV input/output.

use std::path::Path;

use crate::dsp::AudioClip;
use crate::error::{Error, Result};

/// Reads a RIFF WAV file that must be 16-bit signed integer PCM, mono.
/// Samples are scaled to `[-1, 1)` by dividing by 32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let unsupported = |reason: String| Error::UnsupportedWav {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| unsupported(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(unsupported(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(unsupported(format!(
            "{:?} {}-bit samples, expected 16-bit integer PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| unsupported(e.to_string()))?;
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Reads a WAV file and checks it against an expected sample rate.
pub fn read_wav_at_rate(path: impl AsRef<Path>, sample_rate_hz: u32) -> Result<AudioClip> {
    let clip = read_wav(path.as_ref())?;
    if clip.sample_rate_hz != sample_rate_hz {
        return Err(Error::UnsupportedWav {
            path: path.as_ref().to_path_buf(),
            reason: format!(
                "sample rate {} Hz, manifest declares {} Hz",
                clip.sample_rate_hz, sample_rate_hz
            ),
        });
    }
    Ok(clip)
}

/// Writes a clip as 16-bit mono PCM. Samples are clamped to `[-1, 1]`
/// and rounded to the nearest integer step.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}
