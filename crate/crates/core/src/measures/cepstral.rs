//! Smoothed cepstral peak prominence and the low/high spectral ratio.

use super::MeasureConfig;
use crate::audio::AudioClip;
use crate::dsp::fft::{hann, Spectral};
use crate::dsp::ms_to_samples;
use crate::error::{Error, Result};

const POWER_FLOOR: f64 = 1e-20;
const CEPSTRUM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CepstralMeasures {
    /// Mean smoothed CPP over frames, dB.
    pub cpp_db: f64,
    pub cpp_sd_db: f64,
    /// Median quefrency of the per-frame cepstral peak, seconds.
    pub peak_quefrency_s: f64,
    /// Energy below vs above the split frequency, dB (non-silent frames).
    pub lh_ratio_db: f64,
    pub lh_ratio_sd_db: f64,
    pub frames: usize,
}

/// Per frame: Hann window, log power spectrum, power cepstrum in dB.
/// Cepstra are averaged over `cpp_time_smoothing` frames and
/// `cpp_quefrency_smoothing` bins; within `[1/f0_max, 1/f0_min]` the peak is
/// measured against a least-squares line fitted to the cepstrum over the same range.
pub fn cepstral_measures(clip: &AudioClip, cfg: &MeasureConfig) -> Result<CepstralMeasures> {
    cfg.validate()?;
    clip.require_non_empty()?;
    let fs = clip.sample_rate_hz() as f64;
    let frame_len = ms_to_samples(cfg.cpp_frame_ms, clip.sample_rate_hz());
    let hop = ms_to_samples(cfg.hop_ms, clip.sample_rate_hz()).max(1);
    if clip.len() < frame_len {
        return Err(Error::TooShort {
            needed: frame_len,
            got: clip.len(),
            unit: "samples",
        });
    }
    let n_fft = frame_len.next_power_of_two();
    let q_lo = (fs / cfg.f0_max_hz).ceil() as usize;
    let q_hi = ((fs / cfg.f0_min_hz).floor() as usize).min(n_fft / 2 - 1);
    if q_hi <= q_lo + 2 {
        return Err(Error::Config("quefrency search range is empty".into()));
    }
    let n_frames = 1 + (clip.len() - frame_len) / hop;
    let window = hann(frame_len);
    let mut spectral = Spectral::new(n_fft);
    let mut frame = vec![0.0; frame_len];
    let mut power = vec![0.0; n_fft / 2 + 1];
    let mut ceps = vec![0.0; n_fft];
    let split_bin = ((cfg.lh_split_hz / fs * n_fft as f64).round() as usize).clamp(1, n_fft / 2);
    let s = clip.samples();

    // Linear power cepstra restricted to the quefrency range, with one bin of
    // margin on each side for quefrency smoothing.
    let span = q_lo - 1..q_hi + 2;
    let mut cepstra: Vec<Vec<f64>> = Vec::with_capacity(n_frames);
    let mut lh = Vec::new();
    for k in 0..n_frames {
        let raw = &s[k * hop..k * hop + frame_len];
        let mean = raw.iter().sum::<f64>() / frame_len as f64;
        for ((f, x), w) in frame.iter_mut().zip(raw).zip(&window) {
            *f = (x - mean) * w;
        }
        spectral.power_spectrum(&frame, &mut power);
        let low: f64 = power[1..split_bin].iter().sum();
        let high: f64 = power[split_bin..].iter().sum();
        let frame_power = frame.iter().map(|v| v * v).sum::<f64>() / frame_len as f64;
        if frame_power >= cfg.silence_power {
            lh.push(10.0 * ((low + POWER_FLOOR) / (high + POWER_FLOOR)).log10());
        }
        for p in power.iter_mut() {
            *p = 10.0 * (*p + POWER_FLOOR).log10();
        }
        spectral.inverse_real_even(&power, &mut ceps);
        cepstra.push(ceps[span.clone()].iter().map(|c| c * c).collect());
    }

    let width = span.len();
    let half_t = cfg.cpp_time_smoothing / 2;
    let half_q = cfg.cpp_quefrency_smoothing / 2;
    let quefrency: Vec<f64> = (q_lo..=q_hi).map(|q| q as f64 / fs).collect();
    let mut smoothed = vec![0.0; width];
    let mut db = vec![0.0; quefrency.len()];
    let mut cpps = Vec::with_capacity(n_frames);
    let mut peaks = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let lo = k.saturating_sub(half_t);
        let hi = (k + cfg.cpp_time_smoothing - half_t).min(n_frames);
        smoothed.iter_mut().for_each(|v| *v = 0.0);
        for c in &cepstra[lo..hi] {
            for (s, v) in smoothed.iter_mut().zip(c) {
                *s += v;
            }
        }
        let count = (hi - lo) as f64;
        for (i, d) in db.iter_mut().enumerate() {
            // index i + 1 in `smoothed` is quefrency q_lo + i
            let a = (i + 1).saturating_sub(half_q);
            let b = (i + 1 + half_q).min(width - 1);
            let mean = smoothed[a..=b].iter().sum::<f64>() / ((b - a + 1) as f64 * count);
            *d = 10.0 * (mean + CEPSTRUM_FLOOR).log10();
        }
        let (slope, intercept) = linear_fit(&quefrency, &db);
        let (mut best, mut best_i) = (f64::NEG_INFINITY, 0);
        for (i, &v) in db.iter().enumerate() {
            if v > best {
                best = v;
                best_i = i;
            }
        }
        cpps.push(best - (slope * quefrency[best_i] + intercept));
        peaks.push(quefrency[best_i]);
    }

    let (cpp_db, cpp_sd_db) = mean_sd(&cpps);
    let (lh_ratio_db, lh_ratio_sd_db) = if lh.is_empty() { (0.0, 0.0) } else { mean_sd(&lh) };
    peaks.sort_by(f64::total_cmp);
    Ok(CepstralMeasures {
        cpp_db,
        cpp_sd_db,
        peak_quefrency_s: peaks[peaks.len() / 2],
        lh_ratio_db,
        lh_ratio_sd_db,
        frames: n_frames,
    })
}

pub fn cepstral_peak_prominence(clip: &AudioClip, cfg: &MeasureConfig) -> Result<f64> {
    Ok(cepstral_measures(clip, cfg)?.cpp_db)
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

pub(crate) fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals;

    fn cfg() -> MeasureConfig {
        MeasureConfig::default()
    }

    #[test]
    fn pulse_train_peak_at_period_and_beats_noise() {
        let pulse = cepstral_measures(&signals::pulse_train(150.0, 1.0, 0.5), &cfg()).unwrap();
        assert!((pulse.peak_quefrency_s - 1.0 / 150.0).abs() < 0.5e-3, "{}", pulse.peak_quefrency_s);
        let noise = cepstral_measures(&signals::noise(1.0, 0.1, 3), &cfg()).unwrap();
        assert!(pulse.cpp_db > noise.cpp_db + 5.0, "{} vs {}", pulse.cpp_db, noise.cpp_db);
    }

    #[test]
    fn noise_cpp_stable_across_seeds() {
        let values: Vec<f64> = (0..5)
            .map(|seed| cepstral_peak_prominence(&signals::noise(1.0, 0.1, seed), &cfg()).unwrap())
            .collect();
        let (mean, _) = mean_sd(&values);
        assert!(values.iter().all(|v| (v - mean).abs() < 2.0), "{values:?}");
    }

    #[test]
    fn amplitude_doubling_barely_moves_cpp() {
        let clip = signals::harmonic_plus_noise(180.0, 1.0, 15.0, 8);
        let doubled = AudioClip::new(clip.samples().iter().map(|v| v * 2.0).collect(), 44100, "x2").unwrap();
        let a = cepstral_peak_prominence(&clip, &cfg()).unwrap();
        let b = cepstral_peak_prominence(&doubled, &cfg()).unwrap();
        assert!((a - b).abs() < 0.5, "{a} vs {b}");
    }

    #[test]
    fn silence_is_finite() {
        let m = cepstral_measures(&signals::silence(0.5), &cfg()).unwrap();
        assert!(m.cpp_db.is_finite() && m.cpp_db.abs() < 1e-6);
        assert_eq!(m.lh_ratio_db, 0.0);
    }

    #[test]
    fn too_short() {
        assert!(cepstral_measures(&signals::silence(0.01), &cfg()).is_err());
    }
}
