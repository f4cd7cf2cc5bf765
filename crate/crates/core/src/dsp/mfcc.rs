use super::fft::{hamming, Spectral};
use super::{FeatureMatrix, MfccConfig};
use crate::audio::AudioClip;
use crate::error::Result;

/// What occupies the first cepstral slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum C0Mode {
    /// Natural log of the raw frame energy (after DC removal).
    LogEnergy,
    /// The zeroth DCT coefficient of the log filterbank energies.
    Cepstral,
}

/// Triangular filters on the mel scale `2595 log10(1 + f/700)`, spanning
/// 0 Hz to Nyquist, evaluated on FFT bins `0..=n_fft/2`.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Per filter: first bin index and its weights.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn n_filters(&self) -> usize {
        self.filters.len()
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for ((start, w), o) in self.filters.iter().zip(out.iter_mut()) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }

    /// Dense weights of filter `j` over all bins.
    pub fn weights(&self, j: usize, n_bins: usize) -> Vec<f64> {
        let mut dense = vec![0.0; n_bins];
        let (start, w) = &self.filters[j];
        dense[*start..*start + w.len()].copy_from_slice(w);
        dense
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

pub fn mel_filterbank(n_filters: usize, n_fft: usize, sample_rate_hz: u32) -> MelFilterbank {
    let nyquist = sample_rate_hz as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_filters + 1) as f64))
        .collect();
    let bin_hz = sample_rate_hz as f64 / n_fft as f64;
    let n_bins = n_fft / 2 + 1;
    let filters = (0..n_filters)
        .map(|j| {
            let (lo, mid, hi) = (edges[j], edges[j + 1], edges[j + 2]);
            let weight = |k: usize| {
                let f = k as f64 * bin_hz;
                if f <= lo || f >= hi {
                    0.0
                } else if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                }
            };
            let first = (0..n_bins).find(|&k| weight(k) > 0.0).unwrap_or(n_bins - 1);
            let last = (first..n_bins).take_while(|&k| weight(k) > 0.0).last().unwrap_or(first);
            (first, (first..=last).map(weight).collect())
        })
        .collect();
    MelFilterbank { filters }
}

/// 13-dimensional (by default) MFCCs, one row per frame.
///
/// Per frame: clip mean removed, pre-emphasis, Hamming window, power
/// spectrum, mel filterbank energies floored at `energy_floor`, log, DCT-II.
pub fn compute_mfcc(clip: &AudioClip, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    clip.require_non_empty()?;
    let fs = clip.sample_rate_hz();
    let layout = cfg.layout(fs);
    let n_frames = layout.frame_count(clip.len())?;
    let n_fft = cfg.fft_len(layout.frame_len).max(layout.frame_len);

    let samples = clip.samples();
    let dc = samples.iter().sum::<f64>() / samples.len() as f64;
    let window = hamming(layout.frame_len);
    let bank = mel_filterbank(cfg.n_mel_filters, n_fft, fs);
    let dct = dct_matrix(cfg.n_mfcc, cfg.n_mel_filters);
    let mut spectral = Spectral::new(n_fft);

    let mut frame = vec![0.0; layout.frame_len];
    let mut power = vec![0.0; n_fft / 2 + 1];
    let mut mel = vec![0.0; cfg.n_mel_filters];
    let mut values = Vec::with_capacity(n_frames * cfg.n_mfcc);

    for k in 0..n_frames {
        let raw = &samples[k * layout.hop..k * layout.hop + layout.frame_len];
        for (f, &x) in frame.iter_mut().zip(raw) {
            *f = x - dc;
        }
        let energy = frame.iter().map(|x| x * x).sum::<f64>();
        for i in (1..frame.len()).rev() {
            frame[i] -= cfg.pre_emphasis * frame[i - 1];
        }
        frame[0] *= 1.0 - cfg.pre_emphasis;
        for (f, w) in frame.iter_mut().zip(&window) {
            *f *= w;
        }
        spectral.power_spectrum(&frame, &mut power);
        bank.apply(&power, &mut mel);
        for m in mel.iter_mut() {
            *m = m.max(cfg.energy_floor).ln();
        }
        for (i, row) in dct.iter().enumerate() {
            let c = if i == 0 && cfg.c0 == C0Mode::LogEnergy {
                energy.max(cfg.energy_floor).ln()
            } else {
                row.iter().zip(&mel).map(|(a, b)| a * b).sum()
            };
            values.push(c);
        }
    }

    FeatureMatrix::new(
        n_frames,
        cfg.n_mfcc,
        values,
        0.0,
        layout.hop as f64 / fs as f64,
    )
}

/// `sqrt(2/M) cos(pi i (j + 0.5) / M)` for `i < n_out`, `j < M`.
fn dct_matrix(n_out: usize, m: usize) -> Vec<Vec<f64>> {
    let scale = (2.0 / m as f64).sqrt();
    (0..n_out)
        .map(|i| {
            (0..m)
                .map(|j| scale * (std::f64::consts::PI * i as f64 * (j as f64 + 0.5) / m as f64).cos())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn sine(freq: f64, n: usize, amp: f64) -> AudioClip {
        let s = (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / 44100.0).sin())
            .collect();
        AudioClip::new(s, 44100, "sine").unwrap()
    }

    fn noise(n: usize, seed: u64) -> AudioClip {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 0.1).unwrap();
        AudioClip::new((0..n).map(|_| d.sample(&mut rng)).collect(), 44100, "noise").unwrap()
    }

    // Independent path: naive DFT, filters from explicit edge formulas.
    fn oracle_mel_energies(frame: &[f64], n_fft: usize, n_filt: usize, fs: f64) -> Vec<f64> {
        let n_bins = n_fft / 2 + 1;
        let power: Vec<f64> = (0..n_bins)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * t) as f64 / n_fft as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                re * re + im * im
            })
            .collect();
        let top = 2595.0 * (1.0 + fs / 2.0 / 700.0f64).log10();
        let hz = |i: usize| 700.0 * (10f64.powf(top * i as f64 / (n_filt + 1) as f64 / 2595.0) - 1.0);
        (0..n_filt)
            .map(|j| {
                let (a, b, c) = (hz(j), hz(j + 1), hz(j + 2));
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * fs / n_fft as f64;
                        let w = if f > a && f <= b {
                            (f - a) / (b - a)
                        } else if f > b && f < c {
                            (c - f) / (c - b)
                        } else {
                            0.0
                        };
                        w * power[k]
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn zero_clip_rows_identical() {
        let clip = AudioClip::new(vec![0.0; 4410], 44100, "z").unwrap();
        let cfg = MfccConfig::default();
        let m = compute_mfcc(&clip, &cfg).unwrap();
        let first = m.row(0).to_vec();
        assert!(m.rows().all(|r| r == first.as_slice()));
        assert_eq!(first[0], cfg.energy_floor.ln());
        // all filter energies at the floor: DCT of a constant vanishes past c0
        for c in &first[1..] {
            assert!(c.abs() < 1e-9);
        }
    }

    #[test]
    fn sine_matches_dft_oracle() {
        let clip = sine(1000.0, 4410, 0.5);
        let cfg = MfccConfig::default();
        let got = compute_mfcc(&clip, &cfg).unwrap();

        let s = clip.samples();
        let dc = s.iter().sum::<f64>() / s.len() as f64;
        let frame_len = 1103;
        let mut frame: Vec<f64> = s[441..441 + frame_len].iter().map(|x| x - dc).collect();
        let energy: f64 = frame.iter().map(|x| x * x).sum();
        let pre: Vec<f64> = (0..frame_len)
            .map(|i| if i == 0 { frame[0] * 0.03 } else { frame[i] - 0.97 * frame[i - 1] })
            .collect();
        for i in 0..frame_len {
            frame[i] = pre[i] * (0.54 - 0.46 * (2.0 * PI * i as f64 / (frame_len - 1) as f64).cos());
        }
        let mel = oracle_mel_energies(&frame, 2048, 26, 44100.0);

        // energy sits in the filters whose support covers 1 kHz
        let peak = mel.iter().cloned().fold(0.0, f64::max);
        let top = mel.iter().position(|&v| v == peak).unwrap();
        let bank = mel_filterbank(26, 2048, 44100);
        let w = bank.weights(top, 1025);
        let bin_1k = (1000.0f64 * 2048.0 / 44100.0).round() as usize;
        assert!(w[bin_1k] > 0.0);
        let total: f64 = mel.iter().sum();
        let near: f64 = mel
            .iter()
            .enumerate()
            .filter(|(j, _)| bank.weights(*j, 1025)[bin_1k - 3..=bin_1k + 3].iter().any(|&x| x > 0.0))
            .map(|(_, v)| v)
            .sum();
        assert!(near / total > 0.99, "fraction {}", near / total);

        let logmel: Vec<f64> = mel.iter().map(|v| v.max(1e-10).ln()).collect();
        let mut expect = vec![energy.ln()];
        for i in 1..13 {
            expect.push(
                (2.0f64 / 26.0).sqrt()
                    * (0..26)
                        .map(|j| logmel[j] * (PI * i as f64 * (j as f64 + 0.5) / 26.0).cos())
                        .sum::<f64>(),
            );
        }
        for (a, b) in got.row(1).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn white_noise_coefficients_vary() {
        let m = compute_mfcc(&noise(44100 * 2, 3), &MfccConfig::default()).unwrap();
        assert!(m.n_frames() >= 100);
        let mean = m.column_means();
        for d in 0..13 {
            let var: f64 = m.rows().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / m.n_frames() as f64;
            assert!(var > 0.0, "dim {d}");
        }
    }

    #[test]
    fn deterministic_and_scaling() {
        let clip = noise(20000, 9);
        let cfg = MfccConfig::default();
        let a = compute_mfcc(&clip, &cfg).unwrap();
        let b = compute_mfcc(&clip, &cfg).unwrap();
        assert_eq!(a.values(), b.values());

        let scaled = AudioClip::new(clip.samples().iter().map(|x| 2.0 * x).collect(), 44100, "x2").unwrap();
        let s = compute_mfcc(&scaled, &cfg).unwrap();
        for (ra, rs) in a.rows().zip(s.rows()) {
            assert!((rs[0] - ra[0] - 4f64.ln()).abs() < 1e-6);
            for d in 1..13 {
                assert!((rs[d] - ra[d]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cepstral_c0_shifts_with_scale_too() {
        let clip = noise(20000, 1);
        let cfg = MfccConfig {
            c0: C0Mode::Cepstral,
            ..MfccConfig::default()
        };
        let a = compute_mfcc(&clip, &cfg).unwrap();
        let scaled = AudioClip::new(clip.samples().iter().map(|x| 2.0 * x).collect(), 44100, "x2").unwrap();
        let s = compute_mfcc(&scaled, &cfg).unwrap();
        let shift = (2.0f64 / 26.0).sqrt() * 26.0 * 4f64.ln();
        assert!((s.row(0)[0] - a.row(0)[0] - shift).abs() < 1e-6);
    }

    #[test]
    fn too_short_propagates() {
        let clip = AudioClip::new(vec![0.1; 500], 44100, "s").unwrap();
        assert!(compute_mfcc(&clip, &MfccConfig::default()).is_err());
    }
}
