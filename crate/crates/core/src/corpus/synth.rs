//! Synthetic voice corpus: a glottal pulse source through a time-varying
//! formant cascade, with five voice-quality transformations.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{Quality, Recording, RecordingManifest};
use crate::audio::{write_wav_i16, AudioClip};
use crate::error::{Error, Result};

/// Vowel formant targets (Hz) for an unscaled adult vocal tract.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
];
const UPPER_FORMANTS: [f64; 2] = [3500.0, 4500.0];
const BANDWIDTHS: [f64; 5] = [70.0, 100.0, 130.0, 200.0, 260.0];
const BLOCK_S: f64 = 0.005;
const TARGET_RMS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_speakers: usize,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_speakers: 4,
            duration_s: 300.0,
            sample_rate_hz: 44_100,
        }
    }
}

/// Per-speaker constants shared by all five quality recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    pub index: usize,
    pub f0_hz: f64,
    /// Formant frequencies are divided by this vocal-tract length factor.
    pub tract_scale: f64,
    pub bandwidth_scale: f64,
    /// One-pole coefficient of the glottal low-pass pair.
    pub glottal_pole: f64,
    pub syllables_per_s: f64,
}

impl SpeakerProfile {
    pub fn draw(seed: u64, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + index as u64 * 8);
        SpeakerProfile {
            id: format!("spk{:02}", index + 1),
            index,
            f0_hz: rng.gen_range(130.0..230.0),
            tract_scale: rng.gen_range(0.88..1.15),
            bandwidth_scale: rng.gen_range(0.85..1.2),
            glottal_pole: rng.gen_range(0.955..0.975),
            syllables_per_s: rng.gen_range(3.5..5.5),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl Biquad {
    fn peaking(f: f64, gain_db: f64, q: f64, fs: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let w = 2.0 * PI * f / fs;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha / a;
        Biquad {
            b: [(1.0 + alpha * a) / a0, -2.0 * w.cos() / a0, (1.0 - alpha * a) / a0],
            a: [-2.0 * w.cos() / a0, (1.0 - alpha / a) / a0],
            z: [0.0; 2],
        }
    }

    fn notch(f: f64, q: f64, fs: f64) -> Self {
        let w = 2.0 * PI * f / fs;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Biquad {
            b: [1.0 / a0, -2.0 * w.cos() / a0, 1.0 / a0],
            a: [-2.0 * w.cos() / a0, (1.0 - alpha) / a0],
            z: [0.0; 2],
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }
}

/// Two-pole resonator with unity gain at DC; coefficients may change between blocks.
#[derive(Debug, Clone, Copy, Default)]
struct Resonator {
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tune(&mut self, f: f64, bw: f64, fs: f64) {
        let r = (-PI * bw / fs).exp();
        self.c = -r * r;
        self.b = 2.0 * r * (2.0 * PI * f / fs).cos();
        self.a = 1.0 - self.b - self.c;
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

struct QualitySettings {
    f0_scale: f64,
    jitter: f64,
    shimmer: f64,
    /// Extra one-pole low-pass on the voiced source (steeper spectral tilt).
    extra_tilt: f64,
    /// Voiced-to-aspiration energy ratio of the source in dB.
    source_snr_db: f64,
    bandwidth_scale: f64,
    formant_scale: [f64; 3],
}

fn settings(q: Quality) -> QualitySettings {
    let base = QualitySettings {
        f0_scale: 1.0,
        jitter: 0.004,
        shimmer: 0.02,
        extra_tilt: 0.0,
        source_snr_db: 30.0,
        bandwidth_scale: 1.0,
        formant_scale: [1.0; 3],
    };
    match q {
        Quality::Normal | Quality::Hyponasal => base,
        Quality::Breathy => QualitySettings {
            extra_tilt: 0.6,
            source_snr_db: 4.0,
            bandwidth_scale: 1.4,
            ..base
        },
        Quality::Fry => QualitySettings {
            f0_scale: 0.5,
            jitter: 0.02,
            shimmer: 0.1,
            source_snr_db: 25.0,
            bandwidth_scale: 1.5,
            ..base
        },
        Quality::Twang => QualitySettings {
            bandwidth_scale: 0.6,
            formant_scale: [1.1, 1.1, 1.0],
            ..base
        },
    }
}

#[derive(Clone, Copy)]
enum Unit {
    Pause,
    Vowel(usize),
}

/// Renders one recording; deterministic in `(seed, profile, quality, duration)`.
pub fn synthesize_recording(
    profile: &SpeakerProfile,
    quality: Quality,
    duration_s: f64,
    sample_rate_hz: u32,
    seed: u64,
) -> Result<AudioClip> {
    if !(duration_s > 0.0) || sample_rate_hz < 16_000 {
        return Err(Error::Config("synthesis needs a positive duration and at least 16 kHz".into()));
    }
    let fs = sample_rate_hz as f64;
    let n = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 + profile.index as u64 * 8 + quality.index() as u64);
    let qs = settings(quality);

    // syllable/pause plan
    let mut plan: Vec<(usize, usize, Unit)> = Vec::new();
    let mut t = 0usize;
    while t < n {
        let (len_s, unit) = if rng.gen_bool(0.15) {
            (rng.gen_range(0.08..0.35), Unit::Pause)
        } else {
            let mean = 1.0 / profile.syllables_per_s;
            (rng.gen_range(0.6 * mean..1.4 * mean), Unit::Vowel(rng.gen_range(0..VOWELS.len())))
        };
        let len = ((len_s * fs) as usize).max(1).min(n - t);
        plan.push((t, len, unit));
        t += len;
    }

    // source pass: voiced glottal flow derivative and pulse-synchronous aspiration
    let block = (BLOCK_S * fs).round() as usize;
    let mut voiced_src = vec![0.0; n];
    let mut noise_src = vec![0.0; n];
    let mut schedule: Vec<(usize, [f64; 5])> = Vec::new();
    let mut glottal = [0.0f64; 2];
    let mut tilt = 0.0;
    let mut prev = 0.0;
    let mut pending = 0.0;
    let mut phase = 0.0;
    let mut period_scale = 1.0;
    let mut pulse_amp = 1.0;
    let mut formants = [VOWELS[0][0], VOWELS[0][1], VOWELS[0][2], UPPER_FORMANTS[0], UPPER_FORMANTS[1]];
    let mut phrase_start = 0usize;
    let drift_phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let ramp = (0.02 * fs) as usize;
    let glide = (0.04 * fs) as usize;

    for &(start, len, unit) in &plan {
        let from = formants;
        let target = match unit {
            Unit::Vowel(v) => [VOWELS[v][0], VOWELS[v][1], VOWELS[v][2], UPPER_FORMANTS[0], UPPER_FORMANTS[1]],
            Unit::Pause => {
                phrase_start = start + len;
                from
            }
        };
        let voiced = matches!(unit, Unit::Vowel(_));
        let mut k = 0;
        while k < len {
            let g = (k as f64 / glide as f64).min(1.0);
            let mut current = [0.0; 5];
            for i in 0..5 {
                current[i] = from[i] + (target[i] - from[i]) * g;
            }
            schedule.push((start + k, current));
            k += block.min(len - k);
        }
        for pos in 0..len {
            let idx = start + pos;
            let env = if voiced {
                let edge = pos.min(len - 1 - pos) as f64 / ramp as f64;
                if edge >= 1.0 {
                    1.0
                } else {
                    0.5 - 0.5 * (PI * edge).cos()
                }
            } else {
                0.0
            };
            let since = (idx - phrase_start.min(idx)) as f64 / fs;
            let f0 = profile.f0_hz
                * qs.f0_scale
                * (1.08 - 0.05 * since.min(3.0))
                * (1.0 + 0.03 * (2.0 * PI * 0.7 * idx as f64 / fs + drift_phase).sin());

            let mut excitation = pending;
            pending = 0.0;
            let mut burst = 0.0;
            if voiced {
                phase += f0 / (fs * period_scale);
                if phase >= 1.0 {
                    phase -= 1.0;
                    let frac = (phase * fs * period_scale / f0).min(1.0);
                    excitation += pulse_amp * (1.0 - frac);
                    pending = pulse_amp * frac;
                    let z: f64 = StandardNormal.sample(&mut rng);
                    period_scale = (1.0 + qs.jitter * z).clamp(0.5, 1.5);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    pulse_amp = (1.0 + qs.shimmer * z).max(0.1);
                }
                burst = 0.5 + 0.5 * (2.0 * PI * phase).cos();
            } else {
                phase = 0.0;
            }
            glottal[0] = profile.glottal_pole * glottal[0] + (1.0 - profile.glottal_pole) * excitation;
            glottal[1] = profile.glottal_pole * glottal[1] + (1.0 - profile.glottal_pole) * glottal[0];
            tilt = qs.extra_tilt * tilt + (1.0 - qs.extra_tilt) * glottal[1];
            voiced_src[idx] = env * (tilt - prev);
            prev = tilt;
            let z: f64 = StandardNormal.sample(&mut rng);
            noise_src[idx] = env * z * (0.4 + 0.6 * burst);
        }
        formants = target;
    }

    let energy = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let (ev, en) = (energy(&voiced_src), energy(&noise_src));
    let noise_gain = if en > 0.0 && ev > 0.0 {
        (ev / en / 10f64.powf(qs.source_snr_db / 10.0)).sqrt()
    } else {
        0.0
    };

    // vocal tract pass
    let mut out = vec![0.0; n];
    let mut tract = [Resonator::default(); 5];
    for (b, &(from, formants)) in schedule.iter().enumerate() {
        let to = schedule.get(b + 1).map_or(n, |s| s.0);
        for i in 0..5 {
            let scale = if i < 3 { qs.formant_scale[i] } else { 1.0 };
            let f = (formants[i] * scale / profile.tract_scale).min(0.45 * fs);
            tract[i].tune(f, BANDWIDTHS[i] * profile.bandwidth_scale * qs.bandwidth_scale, fs);
        }
        for idx in from..to {
            let mut y = voiced_src[idx] + noise_gain * noise_src[idx];
            for r in tract.iter_mut() {
                y = r.process(y);
            }
            out[idx] = y;
        }
    }

    match quality {
        Quality::Twang => {
            let mut boost = Biquad::peaking(3000.0, 14.0, 1.0, fs);
            out.iter_mut().for_each(|x| *x = boost.process(*x));
        }
        Quality::Hyponasal => {
            let mut notch = Biquad::notch(1100.0, 1.5, fs);
            let mut murmur = Resonator::default();
            murmur.tune(250.0, 80.0, fs);
            let mut shelf = Biquad::peaking(2500.0, -8.0, 0.7, fs);
            out.iter_mut().for_each(|x| {
                let y = shelf.process(notch.process(*x));
                *x = y + 2.0 * murmur.process(y);
            });
        }
        _ => {}
    }

    let rms = (energy(&out) / n as f64).sqrt();
    if !(rms > 0.0) || !rms.is_finite() {
        return Err(Error::Numeric("synthesized recording has no energy".into()));
    }
    let gain = TARGET_RMS / rms;
    for x in out.iter_mut() {
        let floor: f64 = StandardNormal.sample(&mut rng);
        *x = (*x * gain + 1e-4 * floor).clamp(-0.99, 0.99);
    }
    AudioClip::new(out, sample_rate_hz, format!("{}-{}", profile.id, quality))
}

/// Writes `{speaker}/{quality}.wav` under `root` and returns the manifest.
pub fn synthesize_corpus(root: &Path, cfg: &SynthConfig) -> Result<RecordingManifest> {
    if cfg.n_speakers < 2 {
        return Err(Error::Config("a synthetic corpus needs at least two speakers".into()));
    }
    let profiles: Vec<SpeakerProfile> = (0..cfg.n_speakers).map(|i| SpeakerProfile::draw(cfg.seed, i)).collect();
    let jobs: Vec<(&SpeakerProfile, Quality)> = profiles
        .iter()
        .flat_map(|p| Quality::ALL.into_iter().map(move |q| (p, q)))
        .collect();
    let recordings = jobs
        .par_iter()
        .map(|&(p, q)| {
            let clip = synthesize_recording(p, q, cfg.duration_s, cfg.sample_rate_hz, cfg.seed)?;
            let dir = root.join(&p.id);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join(format!("{q}.wav"));
            write_wav_i16(&path, &clip)?;
            Ok(Recording {
                speaker: p.id.clone(),
                quality: q,
                path,
                duration_s: clip.duration_s(),
                sample_rate_hz: cfg.sample_rate_hz,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RecordingManifest::new(recordings)
}
