//! Connected-speech acoustic measures and the 22-dimensional baseline vector.

mod cepstral;
mod csid;
mod periodicity;
mod pitch_strength;

pub use cepstral::{cepstral_measures, cepstral_peak_prominence, CepstralMeasures};
pub use csid::{csid, CsidCoefficients, CSID_TERMS};
pub use periodicity::{
    estimate_f0_contour, f0_statistics, harmonic_to_noise_ratio, hnr_from_track, F0Frame, F0Stats,
    F0Track, Hnr,
};
pub use pitch_strength::{pitch_strength, PitchStrength};

use std::collections::BTreeMap;
use std::io::Write;

use crate::audio::AudioClip;
use crate::dsp::{compute_mfcc, FeatureMatrix, MfccConfig};
use crate::error::{Error, Result};

pub const BASELINE_DIM: usize = 22;

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureConfig {
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    /// Minimum normalized autocorrelation for a voiced frame.
    pub voicing_threshold: f64,
    /// F0/HNR analysis window in periods of `f0_min_hz`.
    pub periods_per_window: f64,
    /// Hop for F0, HNR and CPP frames.
    pub hop_ms: f64,
    /// Frames with mean power below this are treated as silent.
    pub silence_power: f64,
    pub cpp_frame_ms: f64,
    pub cpp_time_smoothing: usize,
    pub cpp_quefrency_smoothing: usize,
    pub lh_split_hz: f64,
    pub ps_frame_ms: f64,
    pub ps_hop_ms: f64,
    pub ps_max_hz: f64,
    pub ps_candidates_per_octave: usize,
    pub mfcc: MfccConfig,
    pub csid: CsidCoefficients,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            f0_min_hz: 60.0,
            f0_max_hz: 500.0,
            voicing_threshold: 0.45,
            periods_per_window: 3.0,
            hop_ms: 10.0,
            silence_power: 1e-10,
            cpp_frame_ms: 40.0,
            cpp_time_smoothing: 10,
            cpp_quefrency_smoothing: 3,
            lh_split_hz: 4000.0,
            ps_frame_ms: 80.0,
            ps_hop_ms: 20.0,
            ps_max_hz: 5000.0,
            ps_candidates_per_octave: 24,
            mfcc: MfccConfig::default(),
            csid: CsidCoefficients::placeholder(),
        }
    }
}

impl MeasureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f0_min_hz > 0.0 && self.f0_max_hz > self.f0_min_hz) {
            return Err(Error::Config("need 0 < f0_min < f0_max".into()));
        }
        if !(0.0..1.0).contains(&self.voicing_threshold) {
            return Err(Error::Config("voicing threshold must lie in [0, 1)".into()));
        }
        if !(self.periods_per_window > 1.0) {
            return Err(Error::Config("analysis window must span more than one period".into()));
        }
        if !(self.hop_ms > 0.0 && self.ps_hop_ms > 0.0 && self.cpp_frame_ms > 0.0 && self.ps_frame_ms > 0.0) {
            return Err(Error::Config("measure frame lengths and hops must be positive".into()));
        }
        if self.cpp_time_smoothing == 0 || self.cpp_quefrency_smoothing == 0 {
            return Err(Error::Config("smoothing widths must be at least 1".into()));
        }
        if self.ps_candidates_per_octave == 0 || !(self.ps_max_hz > self.f0_max_hz) {
            return Err(Error::Config("pitch-strength grid is empty".into()));
        }
        self.mfcc.validate()
    }
}

/// Flags recording which components fell back to documented defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MeasureWarnings {
    pub mfcc: bool,
    pub pitch_strength: bool,
    pub cepstral: bool,
    pub hnr: bool,
    pub f0: bool,
}

impl MeasureWarnings {
    pub fn any(&self) -> bool {
        self.mfcc || self.pitch_strength || self.cepstral || self.hnr || self.f0
    }

    /// `|`-separated names, or `none`.
    pub fn describe(&self) -> String {
        let names: Vec<&str> = [
            (self.mfcc, "mfcc"),
            (self.pitch_strength, "pitch_strength"),
            (self.cepstral, "cepstral"),
            (self.hnr, "hnr"),
            (self.f0, "f0"),
        ]
        .iter()
        .filter(|(set, _)| *set)
        .map(|(_, n)| *n)
        .collect();
        if names.is_empty() {
            "none".into()
        } else {
            names.join("|")
        }
    }
}

/// Order: 13 time-averaged MFCCs, PS, CPP, CSID, HNR, then F0 mean, sd,
/// max, min, slope.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFeatureVector {
    pub mfcc_mean: [f64; 13],
    pub pitch_strength: f64,
    pub cpp: f64,
    pub csid: f64,
    pub hnr: f64,
    pub f0_stats: [f64; 5],
    pub warnings: MeasureWarnings,
}

impl BaselineFeatureVector {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(BASELINE_DIM);
        v.extend_from_slice(&self.mfcc_mean);
        v.extend_from_slice(&[self.pitch_strength, self.cpp, self.csid, self.hnr]);
        v.extend_from_slice(&self.f0_stats);
        v
    }

    pub fn column_names() -> Vec<String> {
        let mut names: Vec<String> = (0..13).map(|i| format!("mfcc_mean_{i}")).collect();
        for n in [
            "pitch_strength",
            "cpp",
            "csid",
            "hnr",
            "f0_mean",
            "f0_sd",
            "f0_max",
            "f0_min",
            "f0_slope",
        ] {
            names.push(n.to_string());
        }
        names
    }
}

/// Baseline vector for a clip. Component failures on the clip become flagged
/// fallbacks; only an invalid configuration is an error.
pub fn baseline_feature_vector(clip: &AudioClip, cfg: &MeasureConfig) -> Result<BaselineFeatureVector> {
    cfg.validate()?;
    let mfcc = compute_mfcc(clip, &cfg.mfcc).ok();
    baseline_from_mfcc(clip, mfcc.as_ref(), cfg)
}

/// Like [`baseline_feature_vector`] but reuses raw (non-normalized) MFCCs
/// computed elsewhere; `None` marks them as failed.
pub fn baseline_from_mfcc(
    clip: &AudioClip,
    mfcc: Option<&FeatureMatrix>,
    cfg: &MeasureConfig,
) -> Result<BaselineFeatureVector> {
    cfg.validate()?;
    let mut warnings = MeasureWarnings::default();
    let mut mfcc_mean = [0.0; 13];
    match mfcc {
        Some(m) if m.dim() == 13 && m.n_frames() > 0 => mfcc_mean.copy_from_slice(&m.column_means()),
        Some(m) if m.dim() != 13 => {
            return Err(Error::Config(format!("baseline expects 13 MFCCs, got {}", m.dim())))
        }
        _ => warnings.mfcc = true,
    }

    let ps = match pitch_strength(clip, cfg) {
        Ok(p) => {
            warnings.pitch_strength = p.fallback;
            p.mean
        }
        Err(_) => {
            warnings.pitch_strength = true;
            0.0
        }
    };
    let cep = cepstral_measures(clip, cfg).ok();
    warnings.cepstral = cep.is_none();
    let (hnr, f0) = match estimate_f0_contour(clip, cfg) {
        Ok(track) => (hnr_from_track(&track), f0_statistics(&track)),
        Err(_) => (
            Hnr {
                hnr_db: 0.0,
                voiced_frames: 0,
                fallback: true,
            },
            F0Stats {
                mean: 0.0,
                sd: 0.0,
                max: 0.0,
                min: 0.0,
                slope_hz_per_s: 0.0,
                fallback: true,
            },
        ),
    };
    warnings.hnr = hnr.fallback;
    warnings.f0 = f0.fallback;

    let cep = cep.unwrap_or(CepstralMeasures {
        cpp_db: 0.0,
        cpp_sd_db: 0.0,
        peak_quefrency_s: 0.0,
        lh_ratio_db: 0.0,
        lh_ratio_sd_db: 0.0,
        frames: 0,
    });
    let terms: BTreeMap<String, f64> = [
        ("cpp", cep.cpp_db),
        ("cpp_sd", cep.cpp_sd_db),
        ("lh_ratio", cep.lh_ratio_db),
        ("lh_ratio_sd", cep.lh_ratio_sd_db),
        ("hnr", hnr.hnr_db),
        ("pitch_strength", ps),
        ("f0_mean", f0.mean),
        ("f0_sd", f0.sd),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let csid_value = csid(&terms, &cfg.csid)?;

    Ok(BaselineFeatureVector {
        mfcc_mean,
        pitch_strength: ps,
        cpp: cep.cpp_db,
        csid: csid_value,
        hnr: hnr.hnr_db,
        f0_stats: f0.to_array(),
        warnings,
    })
}

/// Writes `clip_id`, the 22 named columns and a `warnings` column.
pub fn write_baseline_csv<W: Write>(out: &mut W, rows: &[(String, BaselineFeatureVector)]) -> std::io::Result<()> {
    write!(out, "clip_id")?;
    for name in BaselineFeatureVector::column_names() {
        write!(out, ",{name}")?;
    }
    writeln!(out, ",warnings")?;
    for (id, v) in rows {
        write!(out, "{id}")?;
        for x in v.to_vec() {
            write!(out, ",{x:e}")?;
        }
        writeln!(out, ",{}", v.warnings.describe())?;
    }
    Ok(())
}
