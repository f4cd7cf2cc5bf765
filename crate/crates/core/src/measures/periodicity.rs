//! Short-time normalized autocorrelation: F0 contour, F0 statistics and HNR.

use super::MeasureConfig;
use crate::audio::AudioClip;
use crate::dsp::fft::Spectral;
use crate::error::{Error, Result};

/// A frame is voiced only if the chosen peak exceeds this fraction of the best peak.
const OCTAVE_RATIO: f64 = 0.9;
const MAX_CORRELATION: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Frame {
    /// Centre of the analysis window, seconds.
    pub time_s: f64,
    /// `None` when unvoiced.
    pub f0_hz: Option<f64>,
    /// Normalized autocorrelation at the selected lag (0 when unvoiced with no peak).
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    pub frames: Vec<F0Frame>,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    pub voicing_threshold: f64,
}

impl F0Track {
    pub fn voiced(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.frames
            .iter()
            .filter_map(|f| f.f0_hz.map(|hz| (f.time_s, hz)))
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.voiced().count() as f64 / self.frames.len() as f64
    }
}

/// Autocorrelation F0 tracker with a per-frame voicing decision.
///
/// Each frame spans `periods_per_window / f0_min` seconds. The lag search
/// covers `[1/f0_max, 1/f0_min]`; the selected peak is refined by parabolic
/// interpolation.
pub fn estimate_f0_contour(clip: &AudioClip, cfg: &MeasureConfig) -> Result<F0Track> {
    cfg.validate()?;
    clip.require_non_empty()?;
    let fs = clip.sample_rate_hz() as f64;
    let frame_len = (cfg.periods_per_window * fs / cfg.f0_min_hz).ceil() as usize;
    let lag_min = ((fs / cfg.f0_max_hz).floor() as usize).max(2);
    let lag_max = (fs / cfg.f0_min_hz).ceil() as usize;
    if lag_max + 2 >= frame_len {
        return Err(Error::Config(
            "analysis window must exceed the longest pitch period".into(),
        ));
    }
    if clip.len() < frame_len {
        return Err(Error::TooShort {
            needed: frame_len,
            got: clip.len(),
            unit: "samples",
        });
    }
    let hop = crate::dsp::ms_to_samples(cfg.hop_ms, clip.sample_rate_hz()).max(1);
    let n_frames = 1 + (clip.len() - frame_len) / hop;
    let mut spectral = Spectral::new((frame_len + lag_max + 2).next_power_of_two());
    let mut acf = vec![0.0; spectral.len()];
    let mut frame = vec![0.0; frame_len];
    let mut prefix = vec![0.0; frame_len + 1];
    let mut r = vec![0.0; lag_max + 2];
    let s = clip.samples();

    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let raw = &s[k * hop..k * hop + frame_len];
        let mean = raw.iter().sum::<f64>() / frame_len as f64;
        for (f, &x) in frame.iter_mut().zip(raw) {
            *f = x - mean;
        }
        let time_s = (k * hop) as f64 / fs + frame_len as f64 / (2.0 * fs);
        let energy: f64 = frame.iter().map(|x| x * x).sum();
        if energy / (frame_len as f64) < cfg.silence_power {
            frames.push(F0Frame {
                time_s,
                f0_hz: None,
                strength: 0.0,
            });
            continue;
        }
        for i in 0..frame_len {
            prefix[i + 1] = prefix[i] + frame[i] * frame[i];
        }
        spectral.autocorrelation(&frame, &mut acf);
        for lag in lag_min - 1..=lag_max + 1 {
            let head = prefix[frame_len - lag];
            let tail = prefix[frame_len] - prefix[lag];
            let denom = (head * tail).sqrt();
            r[lag] = if denom > 0.0 { acf[lag] / denom } else { 0.0 };
        }
        let peak = pick_peak(&r, lag_min, lag_max);
        let (f0_hz, strength) = match peak {
            Some((lag, value)) => {
                let hz = fs / lag;
                let voiced = value >= cfg.voicing_threshold
                    && hz >= cfg.f0_min_hz
                    && hz <= cfg.f0_max_hz;
                (voiced.then_some(hz), value)
            }
            None => (None, 0.0),
        };
        frames.push(F0Frame {
            time_s,
            f0_hz,
            strength,
        });
    }
    Ok(F0Track {
        frames,
        f0_min_hz: cfg.f0_min_hz,
        f0_max_hz: cfg.f0_max_hz,
        voicing_threshold: cfg.voicing_threshold,
    })
}

/// Returns the fractional lag and interpolated correlation of the chosen peak.
fn pick_peak(r: &[f64], lag_min: usize, lag_max: usize) -> Option<(f64, f64)> {
    let mut peaks = Vec::new();
    for lag in lag_min..=lag_max {
        if r[lag] > r[lag - 1] && r[lag] >= r[lag + 1] && r[lag] > 0.0 {
            let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
            let curv = a - 2.0 * b + c;
            let (delta, value) = if curv < 0.0 {
                let d = 0.5 * (a - c) / curv;
                (d, b - 0.25 * (a - c) * d)
            } else {
                (0.0, b)
            };
            peaks.push((lag as f64 + delta, value.min(MAX_CORRELATION)));
        }
    }
    let best = peaks.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    peaks.into_iter().find(|p| p.1 >= OCTAVE_RATIO * best)
}

/// Mean, standard deviation, maximum, minimum and slope (Hz/s) of F0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Stats {
    pub mean: f64,
    pub sd: f64,
    pub max: f64,
    pub min: f64,
    pub slope_hz_per_s: f64,
    /// Set when fewer than two voiced frames were available; all values are 0.
    pub fallback: bool,
}

impl F0Stats {
    pub fn to_array(&self) -> [f64; 5] {
        [self.mean, self.sd, self.max, self.min, self.slope_hz_per_s]
    }
}

/// Statistics over voiced frames. Standard deviation uses the `n − 1`
/// denominator; the slope is the least-squares fit of F0 against time.
pub fn f0_statistics(track: &F0Track) -> F0Stats {
    let voiced: Vec<(f64, f64)> = track.voiced().collect();
    if voiced.len() < 2 {
        log::warn!("fewer than two voiced frames; F0 statistics fall back to zeros");
        return F0Stats {
            mean: 0.0,
            sd: 0.0,
            max: 0.0,
            min: 0.0,
            slope_hz_per_s: 0.0,
            fallback: true,
        };
    }
    let n = voiced.len() as f64;
    let mean = voiced.iter().map(|v| v.1).sum::<f64>() / n;
    let t_mean = voiced.iter().map(|v| v.0).sum::<f64>() / n;
    let var = voiced.iter().map(|v| (v.1 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let max = voiced.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let min = voiced.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let sxx: f64 = voiced.iter().map(|v| (v.0 - t_mean).powi(2)).sum();
    let sxy: f64 = voiced.iter().map(|v| (v.0 - t_mean) * (v.1 - mean)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    F0Stats {
        // guard against rounding pushing the mean outside [min, max]
        mean: mean.clamp(min, max),
        sd: var.sqrt(),
        max,
        min,
        slope_hz_per_s: slope,
        fallback: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hnr {
    pub hnr_db: f64,
    pub voiced_frames: usize,
    /// No voiced frames: `hnr_db` is 0.
    pub fallback: bool,
}

/// Mean over voiced frames of `10 log10(r / (1 − r))`.
pub fn hnr_from_track(track: &F0Track) -> Hnr {
    let values: Vec<f64> = track
        .frames
        .iter()
        .filter(|f| f.f0_hz.is_some())
        .map(|f| {
            let r = f.strength.clamp(1e-9, MAX_CORRELATION);
            10.0 * (r / (1.0 - r)).log10()
        })
        .collect();
    if values.is_empty() {
        log::warn!("no voiced frames; HNR falls back to 0 dB");
        return Hnr {
            hnr_db: 0.0,
            voiced_frames: 0,
            fallback: true,
        };
    }
    Hnr {
        hnr_db: values.iter().sum::<f64>() / values.len() as f64,
        voiced_frames: values.len(),
        fallback: false,
    }
}

pub fn harmonic_to_noise_ratio(clip: &AudioClip, cfg: &MeasureConfig) -> Result<Hnr> {
    Ok(hnr_from_track(&estimate_f0_contour(clip, cfg)?))
}
