//! PCM clips and mono WAV I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Mono PCM audio with samples nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
    source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::UnsupportedAudio("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        Ok(AudioClip {
            samples,
            sample_rate_hz,
            source_id: source_id.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Copies `[start, start + len)` into a new clip tagged `source_id`.
    pub fn slice(&self, start: usize, len: usize, source_id: impl Into<String>) -> Result<Self> {
        let end = start
            .checked_add(len)
            .filter(|&e| e <= self.samples.len())
            .ok_or(Error::TooShort {
                needed: start.saturating_add(len),
                got: self.samples.len(),
                unit: "samples",
            })?;
        Ok(AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
            source_id: source_id.into(),
        })
    }

    pub(crate) fn require_non_empty(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::TooShort {
                needed: 1,
                got: 0,
                unit: "samples",
            });
        }
        Ok(())
    }
}

/// Reads a mono WAV file. 16-bit integer PCM and 32-bit float are accepted.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: expected mono, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(Error::UnsupportedAudio(format!(
                "{}: {bits}-bit {fmt:?} samples are not supported",
                path.display()
            )))
        }
    };
    AudioClip::new(samples, spec.sample_rate, path.display().to_string())
}

/// Sample count and rate from a WAV header, without decoding samples.
pub fn wav_info(path: &Path) -> Result<(usize, u32)> {
    let reader = hound::WavReader::open(path).map_err(|source| Error::Wav {
        path: path.to_path_buf(),
        source,
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: expected mono, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    Ok((reader.duration() as usize, spec.sample_rate))
}

/// Writes a clip as 16-bit mono PCM. Samples outside `[-1, 1]` are clipped.
pub fn write_wav_i16(path: &Path, clip: &AudioClip) -> Result<()> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    {
        let mut w = writer.get_i16_writer(clip.samples.len() as u32);
        for &s in &clip.samples {
            w.write_sample(quantize_i16(s));
        }
        w.flush().map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

pub(crate) fn quantize_i16(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}
