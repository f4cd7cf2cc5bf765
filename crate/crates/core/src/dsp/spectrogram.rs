use super::fft::{hamming, Spectral};
use super::FrameLayout;
use crate::audio::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramConfig {
    pub frame_len_ms: f64,
    pub hop_ms: f64,
    pub fft_size: Option<usize>,
    /// Magnitudes below this are clamped to it.
    pub magnitude_floor: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            frame_len_ms: 25.0,
            hop_ms: 10.0,
            fft_size: None,
            magnitude_floor: 1e-10,
        }
    }
}

/// Short-time magnitude spectrum, frames by bins `0..=n_fft/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub n_frames: usize,
    pub n_bins: usize,
    pub bin_hz: f64,
    pub hop_s: f64,
    pub magnitudes: Vec<f64>,
}

impl Spectrogram {
    pub fn frame(&self, k: usize) -> &[f64] {
        &self.magnitudes[k * self.n_bins..(k + 1) * self.n_bins]
    }

    /// Index of the largest bin in frame `k`.
    pub fn dominant_bin(&self, k: usize) -> usize {
        let f = self.frame(k);
        let mut best = 0;
        for (i, &v) in f.iter().enumerate() {
            if v > f[best] {
                best = i;
            }
        }
        best
    }
}

pub fn spectrogram(clip: &AudioClip, cfg: &SpectrogramConfig) -> Result<Spectrogram> {
    clip.require_non_empty()?;
    if !(cfg.magnitude_floor > 0.0) {
        return Err(Error::Config("magnitude floor must be positive".into()));
    }
    let fs = clip.sample_rate_hz();
    let layout = FrameLayout::from_ms(cfg.frame_len_ms, cfg.hop_ms, fs);
    let n_frames = layout.frame_count(clip.len())?;
    let n_fft = cfg
        .fft_size
        .unwrap_or_else(|| layout.frame_len.next_power_of_two())
        .max(layout.frame_len);
    let n_bins = n_fft / 2 + 1;
    let window = hamming(layout.frame_len);
    let mut spectral = Spectral::new(n_fft);
    let mut frame = vec![0.0; layout.frame_len];
    let mut power = vec![0.0; n_bins];
    let mut magnitudes = Vec::with_capacity(n_frames * n_bins);
    let s = clip.samples();
    for k in 0..n_frames {
        let raw = &s[k * layout.hop..k * layout.hop + layout.frame_len];
        for ((f, x), w) in frame.iter_mut().zip(raw).zip(&window) {
            *f = x * w;
        }
        spectral.power_spectrum(&frame, &mut power);
        magnitudes.extend(power.iter().map(|p| p.sqrt().max(cfg.magnitude_floor)));
    }
    Ok(Spectrogram {
        n_frames,
        n_bins,
        bin_hz: fs as f64 / n_fft as f64,
        hop_s: layout.hop as f64 / fs as f64,
        magnitudes,
    })
}
