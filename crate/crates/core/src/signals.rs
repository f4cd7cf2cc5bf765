//! Deterministic test signals at 44.1 kHz: tones, chirps, band-limited pulse
//! trains and sawtooths, and seeded Gaussian noise.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::AudioClip;

pub const FS: u32 = 44_100;

fn n_samples(duration_s: f64) -> usize {
    (duration_s * FS as f64).round() as usize
}

fn clip(samples: Vec<f64>, id: &str) -> AudioClip {
    AudioClip::new(samples, FS, id).expect("generated samples are finite")
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

pub fn sine(freq_hz: f64, duration_s: f64, amplitude: f64) -> AudioClip {
    let s = (0..n_samples(duration_s))
        .map(|i| amplitude * (2.0 * PI * freq_hz * i as f64 / FS as f64).sin())
        .collect();
    clip(s, "sine")
}

/// Linear chirp from `f_start` to `f_end` over the clip.
pub fn chirp(f_start: f64, f_end: f64, duration_s: f64, amplitude: f64) -> AudioClip {
    let rate = (f_end - f_start) / duration_s;
    let s = (0..n_samples(duration_s))
        .map(|i| {
            let t = i as f64 / FS as f64;
            amplitude * (2.0 * PI * (f_start * t + 0.5 * rate * t * t)).sin()
        })
        .collect();
    clip(s, "chirp")
}

pub fn gaussian(n: usize, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, sd).expect("positive sd");
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

pub fn noise(duration_s: f64, sd: f64, seed: u64) -> AudioClip {
    clip(gaussian(n_samples(duration_s), sd, seed), "noise")
}

/// Sum of harmonics `k f0` below `max_hz` with amplitudes `amp(k)`,
/// scaled to a peak of `peak`.
fn harmonic_sum(f0: f64, duration_s: f64, max_hz: f64, peak: f64, amp: impl Fn(usize) -> f64) -> Vec<f64> {
    let n = n_samples(duration_s);
    let n_harm = (max_hz / f0).floor() as usize;
    let mut s = vec![0.0; n];
    for k in 1..=n_harm {
        let a = amp(k);
        let w = 2.0 * PI * k as f64 * f0 / FS as f64;
        for (i, v) in s.iter_mut().enumerate() {
            *v += a * (w * i as f64).cos();
        }
    }
    let max = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        s.iter_mut().for_each(|v| *v *= peak / max);
    }
    s
}

/// Band-limited impulse train (equal-amplitude harmonics up to 10 kHz).
pub fn pulse_train(f0: f64, duration_s: f64, peak: f64) -> AudioClip {
    clip(harmonic_sum(f0, duration_s, 10_000.0, peak, |_| 1.0), "pulse-train")
}

/// Band-limited sawtooth (harmonic `k` at amplitude `1/k`, up to 10 kHz).
pub fn sawtooth(f0: f64, duration_s: f64, peak: f64) -> AudioClip {
    let s: Vec<f64> = {
        let n = n_samples(duration_s);
        let n_harm = (10_000.0 / f0).floor() as usize;
        let mut s = vec![0.0; n];
        for k in 1..=n_harm {
            let w = 2.0 * PI * k as f64 * f0 / FS as f64;
            for (i, v) in s.iter_mut().enumerate() {
                *v += (w * i as f64).sin() / k as f64;
            }
        }
        let max = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        s.iter().map(|v| v * peak / max).collect()
    };
    clip(s, "sawtooth")
}

fn mix_noise(mut s: Vec<f64>, snr_db: f64, seed: u64) -> Vec<f64> {
    let sd = (power(&s) / 10f64.powf(snr_db / 10.0)).sqrt();
    let noise = gaussian(s.len(), sd, seed);
    for (v, n) in s.iter_mut().zip(noise) {
        *v += n;
    }
    s
}

/// Harmonic pulse train (harmonics below 5 kHz) plus white noise at `snr_db`.
pub fn harmonic_plus_noise(f0: f64, duration_s: f64, snr_db: f64, seed: u64) -> AudioClip {
    let s = harmonic_sum(f0, duration_s, 5_000.0, 0.5, |_| 1.0);
    clip(mix_noise(s, snr_db, seed), "harmonic+noise")
}

pub fn sine_plus_noise(f0: f64, duration_s: f64, snr_db: f64, seed: u64) -> AudioClip {
    let s = sine(f0, duration_s, 0.5).samples().to_vec();
    clip(mix_noise(s, snr_db, seed), "sine+noise")
}

pub fn silence(duration_s: f64) -> AudioClip {
    clip(vec![0.0; n_samples(duration_s)], "silence")
}
