//! Framing, spectral analysis and MFCC features.

mod cache;
mod cmvn;
mod deltas;
pub(crate) mod fft;
mod mfcc;
mod spectrogram;

pub use cache::{read_feature_cache, write_feature_cache, FEATURE_MAGIC};
pub use cmvn::{cmvn, cmvn_with, CmvnMode};
pub use deltas::append_deltas;
pub use mfcc::{compute_mfcc, mel_filterbank, C0Mode, MelFilterbank};
pub use spectrogram::{spectrogram, Spectrogram, SpectrogramConfig};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Time-ordered frames by feature dimensions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    frame_times: Vec<f64>,
    hop_s: f64,
}

impl FeatureMatrix {
    /// Builds a matrix whose frame `k` starts at `start_s + k * hop_s`.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, start_s: f64, hop_s: f64) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: values.len(),
            });
        }
        if !(hop_s > 0.0) {
            return Err(Error::Config("frame hop must be positive".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        let frame_times = (0..rows).map(|k| start_s + k as f64 * hop_s).collect();
        Ok(FeatureMatrix {
            rows,
            cols,
            values,
            frame_times,
            hop_s,
        })
    }

    /// Convenience constructor from per-frame rows; frames start at 0 s.
    pub fn from_rows(rows: &[Vec<f64>], hop_s: f64) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        FeatureMatrix::new(rows.len(), cols, values, 0.0, hop_s)
    }

    pub fn n_frames(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.frame_times
    }

    pub fn hop_s(&self) -> f64 {
        self.hop_s
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on zero width; an empty-width matrix has no data anyway.
        self.values.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Per-dimension mean over frames.
    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub(crate) fn with_values(&self, cols: usize, values: Vec<f64>) -> FeatureMatrix {
        debug_assert_eq!(values.len(), self.rows * cols);
        FeatureMatrix {
            rows: self.rows,
            cols,
            values,
            frame_times: self.frame_times.clone(),
            hop_s: self.hop_s,
        }
    }
}

/// MFCC front-end parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub frame_len_ms: f64,
    pub hop_ms: f64,
    pub n_mfcc: usize,
    pub n_mel_filters: usize,
    /// `None` selects the next power of two at or above the frame length.
    pub fft_size: Option<usize>,
    pub pre_emphasis: f64,
    pub delta_window: usize,
    pub energy_floor: f64,
    pub c0: C0Mode,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            frame_len_ms: 25.0,
            hop_ms: 10.0,
            n_mfcc: 13,
            n_mel_filters: 26,
            fft_size: None,
            pre_emphasis: 0.97,
            delta_window: 2,
            energy_floor: 1e-10,
            c0: C0Mode::LogEnergy,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_len_ms > 0.0 && self.hop_ms > 0.0) {
            return Err(Error::Config("frame length and hop must be positive".into()));
        }
        if self.frame_len_ms < self.hop_ms {
            return Err(Error::Config("frame length must be at least the hop".into()));
        }
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mel_filters {
            return Err(Error::Config(format!(
                "n_mfcc ({}) must be in 1..=n_mel_filters ({})",
                self.n_mfcc, self.n_mel_filters
            )));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return Err(Error::Config("pre-emphasis must lie in [0, 1)".into()));
        }
        if !(self.energy_floor > 0.0) {
            return Err(Error::Config("energy floor must be positive".into()));
        }
        if self.delta_window == 0 {
            return Err(Error::Config("delta window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn layout(&self, sample_rate_hz: u32) -> FrameLayout {
        FrameLayout::from_ms(self.frame_len_ms, self.hop_ms, sample_rate_hz)
    }

    pub fn fft_len(&self, frame_len: usize) -> usize {
        self.fft_size.unwrap_or_else(|| frame_len.next_power_of_two())
    }
}

/// Frame length and hop in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub frame_len: usize,
    pub hop: usize,
}

impl FrameLayout {
    /// Converts milliseconds to samples rounding half up, so 25 ms at
    /// 44.1 kHz is 1103 samples.
    pub fn from_ms(frame_len_ms: f64, hop_ms: f64, sample_rate_hz: u32) -> Self {
        FrameLayout {
            frame_len: ms_to_samples(frame_len_ms, sample_rate_hz).max(1),
            hop: ms_to_samples(hop_ms, sample_rate_hz).max(1),
        }
    }

    /// `1 + floor((n - L) / H)`, or an error when `n < L`.
    pub fn frame_count(&self, n_samples: usize) -> Result<usize> {
        if n_samples < self.frame_len {
            return Err(Error::TooShort {
                needed: self.frame_len,
                got: n_samples,
                unit: "samples",
            });
        }
        Ok(1 + (n_samples - self.frame_len) / self.hop)
    }
}

pub(crate) fn ms_to_samples(ms: f64, sample_rate_hz: u32) -> usize {
    // Nudge by a relative epsilon so exact halves survive float error.
    let exact = ms * sample_rate_hz as f64 / 1000.0;
    (exact * (1.0 + 1e-12) + 0.5).floor() as usize
}

/// Splits a clip into overlapping frames; frames that would overrun the end are dropped.
pub fn frame_signal<'a>(clip: &'a AudioClip, cfg: &MfccConfig) -> Result<Vec<&'a [f64]>> {
    let layout = cfg.layout(clip.sample_rate_hz());
    let count = layout.frame_count(clip.len())?;
    let s = clip.samples();
    Ok((0..count)
        .map(|k| &s[k * layout.hop..k * layout.hop + layout.frame_len])
        .collect())
}
