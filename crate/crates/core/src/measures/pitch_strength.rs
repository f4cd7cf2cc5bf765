//! Pitch strength by correlation with prime-harmonic sawtooth kernels.
//!
//! The square-root amplitude spectrum of each frame is correlated with a
//! kernel per candidate pitch on a log-frequency grid. A kernel has a
//! positive cosine lobe at the fundamental and every prime harmonic, negative
//! half-amplitude lobes between them, and a `1/sqrt(f)` envelope; it is made
//! zero-mean and unit-norm. The frame's strength is the best correlation over
//! candidates, clamped at zero, and the clip's value is the average over
//! non-silent frames.

use super::MeasureConfig;
use crate::audio::AudioClip;
use crate::dsp::fft::{hann, Spectral};
use crate::dsp::ms_to_samples;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchStrength {
    pub mean: f64,
    pub voiced_frames: usize,
    /// Every frame was silent; `mean` is 0.
    pub fallback: bool,
}

struct KernelBank {
    first_bin: usize,
    n_bins: usize,
    /// Row-major candidates x bins.
    kernels: Vec<f64>,
}

fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

fn kernel_bank(cfg: &MeasureConfig, n_fft: usize, fs: f64) -> KernelBank {
    let bin_hz = fs / n_fft as f64;
    let first_bin = ((cfg.f0_min_hz * 0.5 / bin_hz).floor() as usize).max(1);
    let last_bin = ((cfg.ps_max_hz / bin_hz).floor() as usize).min(n_fft / 2);
    let n_bins = last_bin - first_bin + 1;
    let octaves = (cfg.f0_max_hz / cfg.f0_min_hz).log2();
    let n_cand = (octaves * cfg.ps_candidates_per_octave as f64).ceil() as usize + 1;
    let mut kernels = Vec::with_capacity(n_cand * n_bins);
    for c in 0..n_cand {
        let f0 = cfg.f0_min_hz * 2f64.powf(c as f64 / cfg.ps_candidates_per_octave as f64);
        let f0 = f0.min(cfg.f0_max_hz);
        let mut k: Vec<f64> = (first_bin..=last_bin)
            .map(|b| {
                let f = b as f64 * bin_hz;
                let q = f / f0;
                let h = q.round() as usize;
                if h == 0 || !(h == 1 || is_prime(h)) {
                    return 0.0;
                }
                let lobe = (2.0 * std::f64::consts::PI * q).cos();
                let amp = if (q - h as f64).abs() <= 0.25 { lobe } else { 0.5 * lobe };
                amp / f.sqrt()
            })
            .collect();
        let mean = k.iter().sum::<f64>() / n_bins as f64;
        k.iter_mut().for_each(|v| *v -= mean);
        let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            k.iter_mut().for_each(|v| *v /= norm);
        }
        kernels.extend(k);
    }
    KernelBank {
        first_bin,
        n_bins,
        kernels,
    }
}

pub fn pitch_strength(clip: &AudioClip, cfg: &MeasureConfig) -> Result<PitchStrength> {
    cfg.validate()?;
    clip.require_non_empty()?;
    let fs = clip.sample_rate_hz() as f64;
    let frame_len = ms_to_samples(cfg.ps_frame_ms, clip.sample_rate_hz());
    if clip.len() < frame_len {
        return Err(Error::TooShort {
            needed: frame_len,
            got: clip.len(),
            unit: "samples",
        });
    }
    let hop = ms_to_samples(cfg.ps_hop_ms, clip.sample_rate_hz()).max(1);
    let n_fft = frame_len.next_power_of_two();
    let bank = kernel_bank(cfg, n_fft, fs);
    let window = hann(frame_len);
    let mut spectral = Spectral::new(n_fft);
    let mut frame = vec![0.0; frame_len];
    let mut power = vec![0.0; n_fft / 2 + 1];
    let mut spec = vec![0.0; bank.n_bins];
    let s = clip.samples();
    let n_frames = 1 + (clip.len() - frame_len) / hop;

    let (mut total, mut counted) = (0.0, 0usize);
    for k in 0..n_frames {
        let raw = &s[k * hop..k * hop + frame_len];
        let mean = raw.iter().sum::<f64>() / frame_len as f64;
        let frame_power = raw.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / frame_len as f64;
        if frame_power < cfg.silence_power {
            continue;
        }
        for ((f, x), w) in frame.iter_mut().zip(raw).zip(&window) {
            *f = (x - mean) * w;
        }
        spectral.power_spectrum(&frame, &mut power);
        // sqrt of magnitude = fourth root of power
        for (v, p) in spec.iter_mut().zip(&power[bank.first_bin..]) {
            *v = p.sqrt().sqrt();
        }
        let norm = spec.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 0.0 {
            continue;
        }
        let best = bank
            .kernels
            .chunks_exact(bank.n_bins)
            .map(|kern| kern.iter().zip(&spec).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        total += (best / norm).max(0.0);
        counted += 1;
    }
    if counted == 0 {
        return Ok(PitchStrength {
            mean: 0.0,
            voiced_frames: 0,
            fallback: true,
        });
    }
    Ok(PitchStrength {
        mean: total / counted as f64,
        voiced_frames: counted,
        fallback: false,
    })
}
