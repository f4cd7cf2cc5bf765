//! Recording manifests, the trim/segment/split protocol, and the synthetic corpus.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::audio::{read_wav, AudioClip};
use crate::error::{Error, Result};

mod synth;

pub use synth::{synthesize_corpus, synthesize_recording, SpeakerProfile, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Quality {
    Normal,
    Breathy,
    Fry,
    Twang,
    Hyponasal,
}

impl Quality {
    pub const ALL: [Quality; 5] = [
        Quality::Normal,
        Quality::Breathy,
        Quality::Fry,
        Quality::Twang,
        Quality::Hyponasal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Quality::Normal => "normal",
            Quality::Breathy => "breathy",
            Quality::Fry => "fry",
            Quality::Twang => "twang",
            Quality::Hyponasal => "hyponasal",
        }
    }

    pub fn index(self) -> usize {
        Quality::ALL.iter().position(|q| *q == self).unwrap()
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Quality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Quality::ALL
            .into_iter()
            .find(|q| q.as_str() == s)
            .ok_or_else(|| Error::format("quality", format!("unknown voice quality {s:?}")))
    }
}

/// Classifier label for a speaker and quality.
pub fn class_label(speaker: &str, quality: Quality) -> String {
    format!("{speaker}:{quality}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub speaker: String,
    pub quality: Quality,
    pub path: PathBuf,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
}

impl Recording {
    pub fn id(&self) -> String {
        format!("{}-{}", self.speaker, self.quality)
    }
}

const MANIFEST_HEADER: &str = "# vqid recordings v1: speaker\tquality\tpath\tduration_s\tsample_rate_hz";

fn valid_speaker(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Tab-separated recording list, one recording per line. Relative paths
/// resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordingManifest {
    pub recordings: Vec<Recording>,
}

impl RecordingManifest {
    pub fn new(mut recordings: Vec<Recording>) -> Result<Self> {
        recordings.sort_by(|a, b| (a.speaker.as_str(), a.quality).cmp(&(b.speaker.as_str(), b.quality)));
        for w in recordings.windows(2) {
            if w[0].speaker == w[1].speaker && w[0].quality == w[1].quality {
                return Err(Error::format(
                    "manifest",
                    format!("duplicate recording for {} {}", w[0].speaker, w[0].quality),
                ));
            }
        }
        for r in &recordings {
            if !valid_speaker(&r.speaker) {
                return Err(Error::format("manifest", format!("invalid speaker id {:?}", r.speaker)));
            }
        }
        Ok(RecordingManifest { recordings })
    }

    pub fn speakers(&self) -> Vec<&str> {
        let mut s: Vec<&str> = self.recordings.iter().map(|r| r.speaker.as_str()).collect();
        s.dedup();
        s
    }

    /// Speakers that do not have all five qualities.
    pub fn incomplete_speakers(&self) -> Vec<(String, Vec<Quality>)> {
        self.speakers()
            .into_iter()
            .filter_map(|sp| {
                let missing: Vec<Quality> = Quality::ALL
                    .into_iter()
                    .filter(|q| !self.recordings.iter().any(|r| r.speaker == sp && r.quality == *q))
                    .collect();
                (!missing.is_empty()).then(|| (sp.to_string(), missing))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.recordings {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{}\n",
                r.speaker,
                r.quality,
                r.path.display(),
                r.duration_s,
                r.sample_rate_hz
            ));
        }
        out
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut recordings = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |d: &str| Error::format("manifest", format!("line {}: {d}", lineno + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 tab-separated fields"));
            }
            let path = PathBuf::from(f[2]);
            recordings.push(Recording {
                speaker: f[0].to_string(),
                quality: f[1].parse()?,
                path: if path.is_absolute() { path } else { base.join(path) },
                duration_s: f[3].parse().map_err(|_| bad("bad duration"))?,
                sample_rate_hz: f[4].parse().map_err(|_| bad("bad sample rate"))?,
            });
        }
        RecordingManifest::new(recordings)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RecordingManifest::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Writes the manifest with paths relative to its directory where possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let rel = RecordingManifest {
            recordings: self
                .recordings
                .iter()
                .map(|r| Recording {
                    path: r.path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| r.path.clone()),
                    ..r.clone()
                })
                .collect(),
        };
        std::fs::write(path, rel.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Builds a manifest from `{speaker}/{quality}.wav` files under `root`.
    pub fn scan(root: &Path) -> Result<Self> {
        let mut recordings = Vec::new();
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let speaker = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            for q in Quality::ALL {
                let path = dir.join(format!("{q}.wav"));
                if path.exists() {
                    let clip = read_wav(&path)?;
                    recordings.push(Recording {
                        speaker: speaker.clone(),
                        quality: q,
                        path,
                        duration_s: clip.duration_s(),
                        sample_rate_hz: clip.sample_rate_hz(),
                    });
                }
            }
        }
        if recordings.is_empty() {
            return Err(Error::InsufficientData(format!("no {{speaker}}/{{quality}}.wav files under {}", root.display())));
        }
        RecordingManifest::new(recordings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "test" => Ok(Role::Test),
            _ => Err(Error::format("segment role", format!("unknown role {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub speaker: String,
    pub quality: Quality,
    pub recording: PathBuf,
    pub sample_rate_hz: u32,
    /// Position among the recording's full-length segments.
    pub index: usize,
    /// `(k, of)` for the k-th child of a re-segmented test segment.
    pub part: Option<(usize, usize)>,
    pub start_sample: usize,
    pub n_samples: usize,
    pub role: Role,
}

impl Segment {
    pub fn id(&self) -> String {
        match self.part {
            None => format!("{}-{}-s{:02}", self.speaker, self.quality, self.index),
            Some((k, of)) => format!("{}-{}-s{:02}-p{}of{}", self.speaker, self.quality, self.index, k, of),
        }
    }

    pub fn label(&self) -> String {
        class_label(&self.speaker, self.quality)
    }

    pub fn start_s(&self) -> f64 {
        self.start_sample as f64 / self.sample_rate_hz as f64
    }

    pub fn length_s(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate_hz as f64
    }

    /// Cuts this segment out of its parent recording's audio.
    pub fn cut(&self, recording: &AudioClip) -> Result<AudioClip> {
        recording.slice(self.start_sample, self.n_samples, self.id())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentConfig {
    pub trim_s: f64,
    pub segment_s: f64,
    pub max_segments: usize,
    /// Return no segments instead of an error for recordings that are too short.
    pub allow_empty: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            trim_s: 30.0,
            segment_s: 8.0,
            max_segments: 30,
            allow_empty: false,
        }
    }
}

fn seconds_to_samples(s: f64, fs: u32) -> usize {
    (s * fs as f64).round() as usize
}

/// Ordered segments with their train/test roles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentSet {
    pub segments: Vec<Segment>,
}

impl SegmentSet {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Segment> {
        self.segments.iter()
    }

    pub fn with_role(&self, role: Role) -> SegmentSet {
        SegmentSet {
            segments: self.segments.iter().filter(|s| s.role == role).cloned().collect(),
        }
    }

    pub fn extend(&mut self, other: SegmentSet) {
        self.segments.extend(other.segments);
    }

    pub fn to_text(&self) -> String {
        let mut out =
            String::from("# vqid segments v1: id\tspeaker\tquality\trecording\tsample_rate_hz\tindex\tpart\tstart_sample\tn_samples\trole\n");
        for s in &self.segments {
            let part = s.part.map_or("-".to_string(), |(k, of)| format!("{k}/{of}"));
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                s.id(),
                s.speaker,
                s.quality,
                s.recording.display(),
                s.sample_rate_hz,
                s.index,
                part,
                s.start_sample,
                s.n_samples,
                s.role.as_str()
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |d: &str| Error::format("segment list", format!("line {}: {d}", lineno + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 10 {
                return Err(bad("expected 10 tab-separated fields"));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
            let part = if f[6] == "-" {
                None
            } else {
                let (k, of) = f[6].split_once('/').ok_or_else(|| bad("bad part"))?;
                Some((num(k)?, num(of)?))
            };
            let seg = Segment {
                speaker: f[1].to_string(),
                quality: f[2].parse()?,
                recording: PathBuf::from(f[3]),
                sample_rate_hz: f[4].parse().map_err(|_| bad("bad sample rate"))?,
                index: num(f[5])?,
                part,
                start_sample: num(f[7])?,
                n_samples: num(f[8])?,
                role: f[9].parse()?,
            };
            if seg.id() != f[0] {
                return Err(bad("segment id does not match its fields"));
            }
            segments.push(seg);
        }
        Ok(SegmentSet { segments })
    }
}

/// Drops `trim_s` from both ends and cuts consecutive `segment_s` windows.
pub fn trim_and_segment(n_samples: usize, recording: &Recording, cfg: &SegmentConfig) -> Result<SegmentSet> {
    let fs = recording.sample_rate_hz;
    let trim = seconds_to_samples(cfg.trim_s, fs);
    let seg = seconds_to_samples(cfg.segment_s, fs);
    if seg == 0 {
        return Err(Error::Config("segment length must be positive".into()));
    }
    let needed = 2 * trim + seg;
    if n_samples < needed {
        if cfg.allow_empty {
            return Ok(SegmentSet::default());
        }
        return Err(Error::TooShort {
            needed,
            got: n_samples,
            unit: "samples",
        });
    }
    let count = ((n_samples - 2 * trim) / seg).min(cfg.max_segments);
    Ok(SegmentSet {
        segments: (0..count)
            .map(|i| Segment {
                speaker: recording.speaker.clone(),
                quality: recording.quality,
                recording: recording.path.clone(),
                sample_rate_hz: fs,
                index: i,
                part: None,
                start_sample: trim + i * seg,
                n_samples: seg,
                role: Role::Train,
            })
            .collect(),
    })
}

/// First `n_train` segments of each (speaker, quality) in temporal order are
/// training data, the rest test data.
pub fn split_train_test(segs: &SegmentSet, n_train: usize) -> Result<SegmentSet> {
    let mut out = segs.clone();
    out.segments.sort_by(|a, b| {
        (a.speaker.as_str(), a.quality, a.start_sample).cmp(&(b.speaker.as_str(), b.quality, b.start_sample))
    });
    let mut i = 0;
    while i < out.segments.len() {
        let (sp, q) = (out.segments[i].speaker.clone(), out.segments[i].quality);
        let end = out.segments[i..]
            .iter()
            .position(|s| s.speaker != sp || s.quality != q)
            .map_or(out.segments.len(), |p| i + p);
        if end - i < n_train + 1 {
            return Err(Error::InsufficientData(format!(
                "{sp} {q} has {} segments; need at least {}",
                end - i,
                n_train + 1
            )));
        }
        for (k, s) in out.segments[i..end].iter_mut().enumerate() {
            s.role = if k < n_train { Role::Train } else { Role::Test };
        }
        i = end;
    }
    Ok(out)
}

/// Splits each full-length test segment into children of `target_s` seconds.
pub fn resegment_test(segs: &SegmentSet, target_s: f64) -> Result<SegmentSet> {
    let mut out = Vec::new();
    for s in &segs.segments {
        if s.role != Role::Test || s.part.is_some() {
            return Err(Error::Config(format!("segment {} is not a full-length test segment", s.id())));
        }
        let child = seconds_to_samples(target_s, s.sample_rate_hz);
        if child == 0 || child > s.n_samples || s.n_samples % child != 0 {
            return Err(Error::Config(format!(
                "{target_s} s does not evenly divide the {} s segment {}",
                s.length_s(),
                s.id()
            )));
        }
        let k = s.n_samples / child;
        for j in 0..k {
            out.push(Segment {
                part: Some((j + 1, k)),
                start_sample: s.start_sample + j * child,
                n_samples: child,
                ..s.clone()
            });
        }
    }
    Ok(SegmentSet { segments: out })
}
