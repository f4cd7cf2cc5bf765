//! Resolved pipeline configuration and its hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::classifiers::plda::EnrollmentMode;
use crate::classifiers::svm::{Multiclass, SvmConfig};
use crate::config::{apply_env_overrides, load_config_file, parse_key_values};
use crate::corpus::SegmentConfig;
use crate::dsp::{CmvnMode, MfccConfig};
use crate::error::{Error, Result};
use crate::gmm::UbmTrainConfig;
use crate::ivector::TvTrainConfig;
use crate::measures::{CsidCoefficients, MeasureConfig};

const DEFAULT_CONFIG: &str = include_str!("../../../../config/default.cfg");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierChoice {
    Plda,
    Svm,
    Both,
}

impl ClassifierChoice {
    pub fn plda(self) -> bool {
        matches!(self, ClassifierChoice::Plda | ClassifierChoice::Both)
    }

    pub fn svm(self) -> bool {
        matches!(self, ClassifierChoice::Svm | ClassifierChoice::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub segments: SegmentConfig,
    pub train_segments: usize,
    pub test_lengths_s: Vec<f64>,
    pub mfcc: MfccConfig,
    pub cmvn: CmvnMode,
    pub ubm: UbmTrainConfig,
    pub tv: TvTrainConfig,
    pub lda_dim: usize,
    pub classifiers: ClassifierChoice,
    pub plda_em_iters: usize,
    pub plda_enrollment: EnrollmentMode,
    pub svm: SvmConfig,
    pub baseline: bool,
    pub measures: MeasureConfig,
    pub plot_speaker: Option<String>,
    pub spectrogram_seconds: f64,
    pub spectrogram_max_hz: f64,
    /// The resolved key/value pairs the fields were read from.
    entries: BTreeMap<String, String>,
}

struct Reader<'a> {
    map: &'a BTreeMap<String, String>,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Result<&str> {
        self.map
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("missing config key {key}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("config key {key}: cannot parse {v:?}")))
    }

    fn positive<T: std::str::FromStr + PartialOrd + Default + Copy>(&self, key: &str) -> Result<T> {
        let v: T = self.parse(key)?;
        if v <= T::default() {
            return Err(Error::Config(format!("config key {key} must be positive")));
        }
        Ok(v)
    }

    fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key)? {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(Error::Config(format!("config key {key}: expected true or false, got {v:?}"))),
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::from_text(DEFAULT_CONFIG, None).expect("bundled default configuration is valid")
    }
}

impl PipelineConfig {
    /// The bundled default configuration text.
    pub fn default_text() -> &'static str {
        DEFAULT_CONFIG
    }

    /// Parses configuration text (without includes) layered over the defaults.
    pub fn from_text(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut map: BTreeMap<String, String> = parse_key_values(DEFAULT_CONFIG, "default config")?.into_iter().collect();
        if !std::ptr::eq(text, DEFAULT_CONFIG) {
            map.extend(parse_key_values(text, "config")?);
        }
        Self::from_map(map, base)
    }

    /// Loads a file (with includes) over the defaults, then applies
    /// `VQID_*` variables from `env`.
    pub fn load<I>(path: Option<&Path>, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut map: BTreeMap<String, String> = parse_key_values(DEFAULT_CONFIG, "default config")?.into_iter().collect();
        if let Some(p) = path {
            map.extend(load_config_file(p)?);
        }
        apply_env_overrides(&mut map, env);
        Self::from_map(map, path.and_then(Path::parent))
    }

    pub fn from_map(map: BTreeMap<String, String>, base: Option<&Path>) -> Result<Self> {
        let defaults: BTreeMap<String, String> = parse_key_values(DEFAULT_CONFIG, "default config")?.into_iter().collect();
        if let Some(unknown) = map.keys().find(|k| !defaults.contains_key(*k)) {
            return Err(Error::Config(format!("unknown config key {unknown}")));
        }
        let r = Reader { map: &map };

        let mfcc = MfccConfig {
            frame_len_ms: r.positive("mfcc_frame_ms")?,
            hop_ms: r.positive("mfcc_hop_ms")?,
            n_mfcc: r.positive("mfcc_count")?,
            n_mel_filters: r.positive("mel_filters")?,
            pre_emphasis: r.parse("pre_emphasis")?,
            delta_window: r.positive("delta_window")?,
            ..MfccConfig::default()
        };
        mfcc.validate()?;
        let cmvn = match r.raw("cmvn")? {
            "mean_variance" => CmvnMode::MeanVariance,
            "mean" => CmvnMode::MeanOnly,
            v => return Err(Error::Config(format!("cmvn must be mean_variance or mean, got {v:?}"))),
        };

        let test_lengths_s = r
            .raw("test_lengths_s")?
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| *v > 0.0)
                    .ok_or_else(|| Error::Config(format!("test_lengths_s: bad length {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let segment_s: f64 = r.positive("segment_s")?;
        for l in &test_lengths_s {
            let k = segment_s / l;
            if (k - k.round()).abs() > 1e-9 {
                return Err(Error::Config(format!("test length {l} s does not divide segment_s = {segment_s}")));
            }
        }

        let seed: u64 = r.parse("seed")?;
        let ubm = UbmTrainConfig {
            components: r.positive("ubm_components")?,
            em_iters: r.positive("ubm_em_iters")?,
            seed,
            var_floor_ratio: r.positive("ubm_var_floor")?,
            rel_tol: r.parse("ubm_rel_tol")?,
            kmeans_iters: r.positive("ubm_kmeans_iters")?,
            kmeans_max_points: r.positive("ubm_kmeans_max_points")?,
            frame_stride: r.positive("ubm_frame_stride")?,
        };
        let tv = TvTrainConfig {
            rank: r.positive("ivector_dim")?,
            em_iters: r.positive("tv_em_iters")?,
            seed,
            init_scale: r.positive("tv_init_scale")?,
            update_covariance: false,
        };
        let classifiers = match r.raw("classifiers")? {
            "plda" => ClassifierChoice::Plda,
            "svm" => ClassifierChoice::Svm,
            "both" => ClassifierChoice::Both,
            v => return Err(Error::Config(format!("classifiers must be plda, svm or both, got {v:?}"))),
        };
        let plda_enrollment = match r.raw("plda_enrollment")? {
            "pooled" => EnrollmentMode::Pooled,
            "segment_max" => EnrollmentMode::SegmentMax,
            v => return Err(Error::Config(format!("plda_enrollment must be pooled or segment_max, got {v:?}"))),
        };
        let svm = SvmConfig {
            complexity: r.positive("svm_complexity")?,
            tolerance: r.positive("svm_tolerance")?,
            max_iter: r.positive("svm_max_iter")?,
            multiclass: Multiclass::parse(r.raw("svm_multiclass")?)?,
        };

        let csid = match r.raw("csid_coefficients")? {
            "placeholder" => CsidCoefficients::placeholder(),
            p => {
                let path = PathBuf::from(p);
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path,
                };
                CsidCoefficients::load(&path)?
            }
        };
        let measures = MeasureConfig {
            f0_min_hz: r.positive("f0_min_hz")?,
            f0_max_hz: r.positive("f0_max_hz")?,
            voicing_threshold: r.parse("voicing_threshold")?,
            hop_ms: r.positive("measure_hop_ms")?,
            cpp_frame_ms: r.positive("cpp_frame_ms")?,
            ps_hop_ms: r.positive("pitch_strength_hop_ms")?,
            mfcc: mfcc.clone(),
            csid,
            ..MeasureConfig::default()
        };
        measures.validate()?;
        let baseline = r.bool("baseline")?;
        if baseline && mfcc.n_mfcc != 13 {
            return Err(Error::Config("the 22-dimensional baseline needs mfcc_count = 13".into()));
        }

        let plot_speaker = Some(r.raw("plot_speaker")?.to_string()).filter(|s| !s.is_empty());
        let cfg = PipelineConfig {
            seed,
            segments: SegmentConfig {
                trim_s: r.parse("trim_s")?,
                segment_s,
                max_segments: r.positive("max_segments")?,
                allow_empty: false,
            },
            train_segments: r.positive("train_segments")?,
            test_lengths_s,
            mfcc,
            cmvn,
            ubm,
            tv,
            lda_dim: r.positive("lda_dim")?,
            classifiers,
            plda_em_iters: r.positive("plda_em_iters")?,
            plda_enrollment,
            svm,
            baseline,
            measures,
            plot_speaker,
            spectrogram_seconds: r.positive("spectrogram_seconds")?,
            spectrogram_max_hz: r.positive("spectrogram_max_hz")?,
            entries: map.clone(),
        };
        if cfg.segments.trim_s < 0.0 {
            return Err(Error::Config("trim_s must not be negative".into()));
        }
        if cfg.train_segments >= cfg.segments.max_segments {
            return Err(Error::Config("train_segments must leave at least one test segment".into()));
        }
        Ok(cfg)
    }

    /// Overrides the seed (and the seeds of the stages that use it).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.ubm.seed = seed;
        self.tv.seed = seed;
        self.entries.insert("seed".into(), seed.to_string());
        self
    }

    /// Canonical `key = value` listing of every setting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 of the canonical listing, as 64 hex digits.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }

    /// Checks settings that depend on the corpus size.
    pub fn validate_for(&self, n_classes: usize, n_train_segments: usize) -> Result<()> {
        if n_classes < 2 {
            return Err(Error::InsufficientData(format!("{n_classes} class(es); need at least 2")));
        }
        if self.lda_dim > n_classes - 1 || self.lda_dim > self.tv.rank {
            return Err(Error::Config(format!(
                "lda_dim = {} exceeds min(classes - 1, ivector_dim) = {}",
                self.lda_dim,
                (n_classes - 1).min(self.tv.rank)
            )));
        }
        if n_train_segments < self.tv.rank {
            log::warn!("{n_train_segments} training segments for an i-vector dimension of {}", self.tv.rank);
        }
        Ok(())
    }
}
