//! Pipeline stages. Each reads its inputs from the workspace, checks their
//! stamps, and writes stamped outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::PipelineConfig;
use super::plots;
use super::report::{comparison_text, Evaluation, EvaluationReport, Prediction, System};
use super::workspace::{check_overwrite, verify_stamps, write_stamp, LeakageAudit, Workspace};
use crate::audio::{read_wav, wav_info, AudioClip};
use crate::classifiers::plda::{ClassEnrollment, EnrolledClasses, PldaModel};
use crate::classifiers::svm::LinearSvmModel;
use crate::classifiers::write_scores_csv;
use crate::corpus::{
    resegment_test, split_train_test, trim_and_segment, Quality, RecordingManifest, Role, Segment, SegmentSet,
};
use crate::dsp::{append_deltas, cmvn_with, compute_mfcc, read_feature_cache, write_feature_cache, FeatureMatrix};
use crate::error::{Error, Result};
use crate::gmm::{train_ubm as fit_ubm, DiagonalGmm, SufficientStats};
use crate::ivector::{
    extract_ivector, read_ivectors_csv, train_total_variability, write_ivectors_csv, IVector, TotalVariabilityModel,
};
use crate::lda::LdaTransform;
use crate::measures::{baseline_from_mfcc, write_baseline_csv, BaselineFeatureVector, BASELINE_DIM};

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn timed<T>(ws: &Workspace, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    ws.log(&format!("stage {stage}: start"))?;
    let out = f()?;
    ws.log(&format!("stage {stage}: done in {:.2} s", start.elapsed().as_secs_f64()))?;
    Ok(out)
}

/// Test segments scored at `length_s`: the full-length test segments when
/// the length equals the segment length, their children otherwise.
pub fn test_segments_at(segments: &SegmentSet, length_s: f64, segment_s: f64) -> Vec<&Segment> {
    segments
        .iter()
        .filter(|s| s.role == Role::Test)
        .filter(|s| match s.part {
            None => (length_s - segment_s).abs() < 1e-9,
            Some((_, of)) => (s.length_s() - length_s).abs() < 1e-6 && of > 1,
        })
        .collect()
}

pub fn train_segments(segments: &SegmentSet) -> Vec<&Segment> {
    segments.iter().filter(|s| s.role == Role::Train).collect()
}

fn ids(segs: &[&Segment]) -> Vec<String> {
    segs.iter().map(|s| s.id()).collect()
}

/// Segments the manifest, splits train/test and adds the shorter test lengths.
pub fn ingest(ws: &Workspace, cfg: &PipelineConfig, manifest: &RecordingManifest, force: bool) -> Result<SegmentSet> {
    timed(ws, "ingest", || {
        check_overwrite(&ws.segments(), cfg, force)?;
        if manifest.recordings.is_empty() {
            return Err(Error::InsufficientData("the manifest lists no recordings".into()));
        }
        if let Some((sp, missing)) = manifest.incomplete_speakers().into_iter().next() {
            let names: Vec<&str> = missing.iter().map(|q| q.as_str()).collect();
            return Err(Error::InsufficientData(format!("speaker {sp} is missing {}", names.join(", "))));
        }
        let n_classes = manifest.recordings.len();
        cfg.validate_for(n_classes, n_classes * cfg.train_segments)?;

        let mut full = SegmentSet::default();
        for rec in &manifest.recordings {
            let (n, fs) = wav_info(&rec.path)?;
            if fs != rec.sample_rate_hz {
                log::warn!("{}: header rate {fs} Hz differs from manifest {} Hz", rec.path.display(), rec.sample_rate_hz);
            }
            let rec = crate::corpus::Recording {
                sample_rate_hz: fs,
                ..rec.clone()
            };
            full.extend(trim_and_segment(n, &rec, &cfg.segments)?);
        }
        let mut set = split_train_test(&full, cfg.train_segments)?;
        let tests = set.with_role(Role::Test);
        for &l in &cfg.test_lengths_s {
            if (l - cfg.segments.segment_s).abs() > 1e-9 {
                set.extend(resegment_test(&tests, l)?);
            }
        }
        manifest.save(&ws.recordings())?;
        write_stamp(&ws.recordings(), cfg)?;
        write_text(&ws.segments(), &set.to_text())?;
        write_stamp(&ws.segments(), cfg)?;
        ws.write_config(cfg)?;
        ws.log(&format!(
            "ingest: recordings={} speakers={} train={} test={} (lengths {:?} s)",
            manifest.recordings.len(),
            manifest.speakers().len(),
            set.with_role(Role::Train).len(),
            set.with_role(Role::Test).len(),
            cfg.test_lengths_s
        ))?;
        Ok(set)
    })
}

pub fn load_segments(ws: &Workspace, cfg: &PipelineConfig) -> Result<SegmentSet> {
    verify_stamps(&[ws.segments()], cfg)?;
    SegmentSet::parse(&read_text(&ws.segments())?)
}

/// The 39-dimensional front-end features from raw MFCCs.
pub fn normalize_features(raw: &FeatureMatrix, cfg: &PipelineConfig) -> Result<FeatureMatrix> {
    cmvn_with(&append_deltas(raw, cfg.mfcc.delta_window)?, cfg.cmvn)
}

/// Computes features (and baseline vectors) for every segment.
pub fn extract_features(ws: &Workspace, cfg: &PipelineConfig, force: bool) -> Result<()> {
    timed(ws, "extract-features", || {
        let segments = load_segments(ws, cfg)?;
        let dir = ws.features_dir();
        check_overwrite(&dir, cfg, force)?;
        ws.ensure_dir(&dir)?;
        let mut by_recording: BTreeMap<PathBuf, Vec<&Segment>> = BTreeMap::new();
        for s in segments.iter() {
            by_recording.entry(s.recording.clone()).or_default().push(s);
        }
        let groups: Vec<(PathBuf, Vec<&Segment>)> = by_recording.into_iter().collect();
        let rows = groups
            .par_iter()
            .map(|(path, segs)| {
                let audio = read_wav(path)?;
                segs.iter()
                    .map(|s| {
                        let clip = s.cut(&audio)?;
                        let raw = compute_mfcc(&clip, &cfg.mfcc)?;
                        let feats = normalize_features(&raw, cfg)?;
                        write_feature_cache(&ws.feature_file(&s.id()), &feats, cfg.mfcc.frame_len_ms)?;
                        let base = if cfg.baseline {
                            Some(baseline_from_mfcc(&clip, Some(&raw), &cfg.measures)?)
                        } else {
                            None
                        };
                        Ok((s.id(), base))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut by_id: BTreeMap<String, Option<BaselineFeatureVector>> = rows.into_iter().flatten().collect();
        write_stamp(&dir, cfg)?;
        ws.log(&format!("extract-features: segments={} dim={}", segments.len(), 3 * cfg.mfcc.n_mfcc))?;
        if cfg.baseline {
            let rows: Vec<(String, BaselineFeatureVector)> = segments
                .iter()
                .map(|s| {
                    let id = s.id();
                    let v = by_id.remove(&id).flatten().expect("every segment was measured");
                    (id, v)
                })
                .collect();
            let flagged = rows.iter().filter(|(_, v)| v.warnings.any()).count();
            let mut buf = Vec::new();
            write_baseline_csv(&mut buf, &rows).map_err(|e| Error::io(ws.baseline(), e))?;
            std::fs::write(ws.baseline(), buf).map_err(|e| Error::io(ws.baseline(), e))?;
            write_stamp(&ws.baseline(), cfg)?;
            ws.log(&format!("extract-features: baseline vectors={} with-fallbacks={flagged}", rows.len()))?;
        }
        Ok(())
    })
}

fn load_features(ws: &Workspace, segs: &[&Segment]) -> Result<Vec<FeatureMatrix>> {
    segs.par_iter()
        .map(|s| {
            let path = ws.feature_file(&s.id());
            if !path.exists() {
                return Err(Error::MissingArtifact(path));
            }
            Ok(read_feature_cache(&path)?.0)
        })
        .collect()
}

fn segment_stats(ws: &Workspace, ubm: &DiagonalGmm, segs: &[&Segment]) -> Result<Vec<SufficientStats>> {
    segs.par_iter()
        .map(|s| {
            let path = ws.feature_file(&s.id());
            if !path.exists() {
                return Err(Error::MissingArtifact(path));
            }
            ubm.accumulate_stats(&read_feature_cache(&path)?.0)
        })
        .collect()
}

pub fn train_ubm(ws: &Workspace, cfg: &PipelineConfig, force: bool) -> Result<()> {
    timed(ws, "train-ubm", || {
        check_overwrite(&ws.ubm(), cfg, force)?;
        let segments = load_segments(ws, cfg)?;
        verify_stamps(&[ws.features_dir()], cfg)?;
        let train = train_segments(&segments);
        LeakageAudit::new(&segments).record(ws, "ubm", &ids(&train))?;
        let feats = load_features(ws, &train)?;
        let refs: Vec<&FeatureMatrix> = feats.iter().collect();
        let (ubm, log) = fit_ubm(&refs, &cfg.ubm)?;
        for (i, ll) in log.avg_log_likelihood.iter().enumerate() {
            ws.log(&format!("train-ubm: iter {i} avg_log_likelihood={ll:.6}"))?;
        }
        ws.log(&format!(
            "train-ubm: components={} frames={} stopped_early={}",
            ubm.n_components(),
            log.frames,
            log.stopped_early
        ))?;
        ubm.save(&ws.ubm())?;
        write_stamp(&ws.ubm(), cfg)
    })
}

fn load_ubm(ws: &Workspace, cfg: &PipelineConfig) -> Result<DiagonalGmm> {
    verify_stamps(&[ws.ubm()], cfg)?;
    DiagonalGmm::load(&ws.ubm())
}

pub fn train_tv(ws: &Workspace, cfg: &PipelineConfig, force: bool) -> Result<()> {
    timed(ws, "train-tv", || {
        check_overwrite(&ws.tv(), cfg, force)?;
        let segments = load_segments(ws, cfg)?;
        verify_stamps(&[ws.features_dir()], cfg)?;
        let ubm = load_ubm(ws, cfg)?;
        let train = train_segments(&segments);
        LeakageAudit::new(&segments).record(ws, "tv", &ids(&train))?;
        let stats = segment_stats(ws, &ubm, &train)?;
        let (tv, log) = train_total_variability(&stats, &ubm, &cfg.tv)?;
        for (i, (obj, rec)) in log.objective.iter().zip(&log.reconstruction_error).enumerate() {
            ws.log(&format!("train-tv: iter {i} objective={obj:.6} reconstruction_error={rec:.6}"))?;
        }
        tv.save(&ws.tv())?;
        write_stamp(&ws.tv(), cfg)
    })
}

pub fn extract_ivectors(ws: &Workspace, cfg: &PipelineConfig, force: bool) -> Result<()> {
    timed(ws, "extract-ivectors", || {
        check_overwrite(&ws.raw_ivectors(), cfg, force)?;
        let segments = load_segments(ws, cfg)?;
        verify_stamps(&[ws.features_dir(), ws.tv()], cfg)?;
        let ubm = load_ubm(ws, cfg)?;
        let tv = TotalVariabilityModel::load(&ws.tv(), &ubm)?;
        let all: Vec<&Segment> = segments.iter().collect();
        let ivectors = all
            .par_iter()
            .map(|s| {
                let path = ws.feature_file(&s.id());
                if !path.exists() {
                    return Err(Error::MissingArtifact(path));
                }
                let stats = ubm.accumulate_stats(&read_feature_cache(&path)?.0)?;
                extract_ivector(&s.id(), &stats, &tv)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut buf = Vec::new();
        write_ivectors_csv(&mut buf, &ivectors).map_err(|e| Error::io(ws.raw_ivectors(), e))?;
        std::fs::write(ws.raw_ivectors(), buf).map_err(|e| Error::io(ws.raw_ivectors(), e))?;
        ws.log(&format!("extract-ivectors: count={} dim={}", ivectors.len(), tv.rank()))?;
        write_stamp(&ws.raw_ivectors(), cfg)
    })
}

fn load_ivectors(path: &Path, cfg: &PipelineConfig) -> Result<BTreeMap<String, IVector>> {
    verify_stamps(&[path.to_path_buf()], cfg)?;
    Ok(read_ivectors_csv(&read_text(path)?)?
        .into_iter()
        .map(|v| (v.id().to_string(), v))
        .collect())
}

fn lookup<'a, T>(map: &'a BTreeMap<String, T>, id: &str, what: &str) -> Result<&'a T> {
    map.get(id)
        .ok_or_else(|| Error::InsufficientData(format!("no {what} for segment {id}")))
}

pub fn fit_postproc(ws: &Workspace, cfg: &PipelineConfig, force: bool) -> Result<()> {
    timed(ws, "fit-postproc", || {
        check_overwrite(&ws.lda(), cfg, force)?;
        let segments = load_segments(ws, cfg)?;
        let raw = load_ivectors(&ws.raw_ivectors(), cfg)?;
        let train = train_segments(&segments);
        LeakageAudit::new(&segments).record(ws, "lda", &ids(&train))?;
        let labels: Vec<String> = train.iter().map(|s| s.label()).collect();
        let vectors = train
            .iter()
            .map(|s| Ok(lookup(&raw, &s.id(), "i-vector")?.values()))
            .collect::<Result<Vec<&[f64]>>>()?;
        let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        let lda = LdaTransform::fit(&vectors, &label_refs, cfg.lda_dim)?;
        ws.log(&format!(
            "fit-postproc: lda {} -> {} over {} classes, leading eigenvalues {:?}",
            lda.input_dim(),
            lda.output_dim(),
            lda.classes(),
            &lda.eigenvalues()[..lda.output_dim().min(3)]
        ))?;
        lda.save(&ws.lda())?;
        write_stamp(&ws.lda(), cfg)?;
        let processed = segments
            .iter()
            .map(|s| lda.project_center_lnorm(lookup(&raw, &s.id(), "i-vector")?))
            .collect::<Result<Vec<_>>>()?;
        let mut buf = Vec::new();
        write_ivectors_csv(&mut buf, &processed).map_err(|e| Error::io(ws.ivectors(), e))?;
        std::fs::write(ws.ivectors(), buf).map_err(|e| Error::io(ws.ivectors(), e))?;
        write_stamp(&ws.ivectors(), cfg)
    })
}

/// Reads `baseline.csv` into id → 22 values.
pub fn read_baseline_csv(text: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != BASELINE_DIM + 2 {
            return Err(Error::format("baseline CSV", format!("line {}: expected {} fields", i + 1, BASELINE_DIM + 2)));
        }
        let values = f[1..=BASELINE_DIM]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::format("baseline CSV", format!("line {}: bad number {v:?}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        out.insert(f[0].to_string(), values);
    }
    Ok(out)
}

/// Per-dimension standardization fitted on training vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl ZScore {
    /// Constant dimensions get unit scale.
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).ok_or_else(|| Error::InsufficientData("no rows to standardize".into()))?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let sd = var.iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Ok(ZScore { mean, sd })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.sd).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("dim\tmean\tsd\n");
        for (i, (m, s)) in self.mean.iter().zip(&self.sd).enumerate() {
            out.push_str(&format!("{i}\t{m:e}\t{s:e}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut mean = Vec::new();
        let mut sd = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::format("z-score table", format!("bad number {s:?}")));
            if f.len() != 3 {
                return Err(Error::format("z-score table", "expected 3 fields"));
            }
            mean.push(num(f[1])?);
            sd.push(num(f[2])?);
        }
        Ok(ZScore { mean, sd })
    }
}

fn speakers_of(segs: &[&Segment]) -> Vec<String> {
    let mut s: Vec<String> = segs.iter().map(|s| s.speaker.clone()).collect();
    s.sort();
    s.dedup();
    s
}

pub fn svm_intra_path(ws: &Workspace, speaker: &str) -> PathBuf {
    ws.backend_dir().join(format!("svm_intra_{speaker}.vqsv"))
}

pub fn baseline_svm_path(ws: &Workspace, speaker: &str) -> PathBuf {
    ws.backend_dir().join(format!("baseline_svm_{speaker}.vqsv"))
}

fn backend_artifacts(ws: &Workspace, cfg: &PipelineConfig, speakers: &[String]) -> Vec<PathBuf> {
    let dir = ws.backend_dir();
    let mut out = Vec::new();
    if cfg.classifiers.plda() {
        out.push(dir.join("plda.vqpl"));
    }
    if cfg.classifiers.svm() {
        out.push(dir.join("svm_inter.vqsv"));
        out.extend(speakers.iter().map(|s| svm_intra_path(ws, s)));
    }
    if cfg.baseline {
        out.push(dir.join("baseline_zscore.tsv"));
        out.extend(speakers.iter().map(|s| baseline_svm_path(ws, s)));
    }
    out
}

fn audited_components(cfg: &PipelineConfig) -> Vec<&'static str> {
    let mut c = vec!["ubm", "tv", "lda"];
    if cfg.classifiers.plda() {
        c.push("plda");
    }
    if cfg.classifiers.svm() {
        c.extend(["svm-intra", "svm-inter"]);
    }
    if cfg.baseline {
        c.extend(["baseline-zscore", "baseline-svm"]);
    }
    c
}

/// Trains PLDA and SVM back-ends on i-vectors and the baseline SVMs.
pub fn train_backend(ws: &Workspace, cfg: &PipelineConfig, force: bool) -> Result<()> {
    timed(ws, "train-backend", || {
        let segments = load_segments(ws, cfg)?;
        let train = train_segments(&segments);
        let speakers = speakers_of(&train);
        for a in backend_artifacts(ws, cfg, &speakers) {
            check_overwrite(&a, cfg, force)?;
        }
        ws.ensure_dir(&ws.backend_dir())?;
        let audit = LeakageAudit::new(&segments);
        let processed = load_ivectors(&ws.ivectors(), cfg)?;
        let vectors = train
            .iter()
            .map(|s| Ok(lookup(&processed, &s.id(), "i-vector")?.values()))
            .collect::<Result<Vec<&[f64]>>>()?;
        let labels: Vec<String> = train.iter().map(|s| s.label()).collect();
        let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        let train_ids = ids(&train);

        if cfg.classifiers.plda() {
            audit.record(ws, "plda", &train_ids)?;
            let (model, log) = PldaModel::train(&vectors, &label_refs, cfg.plda_em_iters)?;
            for (i, ll) in log.log_likelihood.iter().enumerate() {
                ws.log(&format!("train-backend: plda iter {i} log_likelihood={ll:.6}"))?;
            }
            let path = ws.backend_dir().join("plda.vqpl");
            model.save(&path)?;
            write_stamp(&path, cfg)?;
        }
        if cfg.classifiers.svm() {
            audit.record(ws, "svm-inter", &train_ids)?;
            let inter = LinearSvmModel::train(&vectors, &label_refs, &cfg.svm)?;
            let path = ws.backend_dir().join("svm_inter.vqsv");
            inter.save(&path)?;
            write_stamp(&path, cfg)?;
            ws.log(&format!("train-backend: svm-inter machines={}", inter.machines().len()))?;
            let mut intra_ids = Vec::new();
            for sp in &speakers {
                let idx: Vec<usize> = (0..train.len()).filter(|&i| &train[i].speaker == sp).collect();
                intra_ids.extend(idx.iter().map(|&i| train_ids[i].clone()));
                let x: Vec<&[f64]> = idx.iter().map(|&i| vectors[i]).collect();
                let y: Vec<&str> = idx.iter().map(|&i| label_refs[i]).collect();
                let model = LinearSvmModel::train(&x, &y, &cfg.svm)?;
                let path = svm_intra_path(ws, sp);
                model.save(&path)?;
                write_stamp(&path, cfg)?;
            }
            audit.record(ws, "svm-intra", &intra_ids)?;
        }
        if cfg.baseline {
            verify_stamps(&[ws.baseline()], cfg)?;
            let base = read_baseline_csv(&read_text(&ws.baseline())?)?;
            let rows = train
                .iter()
                .map(|s| Ok(lookup(&base, &s.id(), "baseline vector")?.as_slice()))
                .collect::<Result<Vec<&[f64]>>>()?;
            audit.record(ws, "baseline-zscore", &train_ids)?;
            let z = ZScore::fit(&rows)?;
            let zpath = ws.backend_dir().join("baseline_zscore.tsv");
            write_text(&zpath, &z.to_text())?;
            write_stamp(&zpath, cfg)?;
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| z.apply(r)).collect();
            let mut used = Vec::new();
            for sp in &speakers {
                let idx: Vec<usize> = (0..train.len()).filter(|&i| &train[i].speaker == sp).collect();
                used.extend(idx.iter().map(|&i| train_ids[i].clone()));
                let x: Vec<&[f64]> = idx.iter().map(|&i| scaled[i].as_slice()).collect();
                let y: Vec<&str> = idx.iter().map(|&i| label_refs[i]).collect();
                let model = LinearSvmModel::train(&x, &y, &cfg.svm)?;
                let path = baseline_svm_path(ws, sp);
                model.save(&path)?;
                write_stamp(&path, cfg)?;
            }
            audit.record(ws, "baseline-svm", &used)?;
        }
        Ok(())
    })
}

/// Reports produced by one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationOutcome {
    pub intra: EvaluationReport,
    pub inter: EvaluationReport,
    pub baseline: Option<EvaluationReport>,
}

impl EvaluationOutcome {
    pub fn reports(&self) -> Vec<&EvaluationReport> {
        let mut r = vec![&self.intra, &self.inter];
        r.extend(self.baseline.as_ref());
        r
    }
}

fn enroll(model: &PldaModel, cfg: &PipelineConfig, train: &[&Segment], vectors: &BTreeMap<String, IVector>) -> Result<EnrolledClasses> {
    let mut by_label: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for s in train {
        by_label
            .entry(s.label())
            .or_default()
            .push(lookup(vectors, &s.id(), "i-vector")?.values().to_vec());
    }
    let enrollments = by_label
        .into_iter()
        .map(|(l, v)| ClassEnrollment::new(l, v))
        .collect::<Result<Vec<_>>>()?;
    model.enroll(&enrollments, cfg.plda_enrollment)
}

/// Scores every test segment and writes the reports.
pub fn evaluate(ws: &Workspace, cfg: &PipelineConfig) -> Result<EvaluationOutcome> {
    timed(ws, "evaluate", || {
        let segments = load_segments(ws, cfg)?;
        let train = train_segments(&segments);
        let speakers = speakers_of(&train);
        let mut needed = vec![ws.ubm(), ws.tv(), ws.lda(), ws.ivectors()];
        needed.extend(backend_artifacts(ws, cfg, &speakers));
        if cfg.baseline {
            needed.push(ws.baseline());
        }
        ws.require(&needed)?;
        verify_stamps(&needed, cfg)?;
        let audit = LeakageAudit::new(&segments);
        for c in audited_components(cfg) {
            audit.recheck(ws, c)?;
        }

        let vectors = load_ivectors(&ws.ivectors(), cfg)?;
        let hash = cfg.hash();
        let reports_dir = ws.reports_dir();
        let scores_dir = reports_dir.join("scores");
        ws.ensure_dir(&scores_dir)?;

        let enrolled = if cfg.classifiers.plda() {
            let model = PldaModel::load(&ws.backend_dir().join("plda.vqpl"))?;
            Some(enroll(&model, cfg, &train, &vectors)?)
        } else {
            None
        };
        let svm_inter = if cfg.classifiers.svm() {
            Some(LinearSvmModel::load(&ws.backend_dir().join("svm_inter.vqsv"))?)
        } else {
            None
        };
        let svm_intra: BTreeMap<String, LinearSvmModel> = if cfg.classifiers.svm() {
            speakers
                .iter()
                .map(|s| Ok((s.clone(), LinearSvmModel::load(&svm_intra_path(ws, s))?)))
                .collect::<Result<_>>()?
        } else {
            BTreeMap::new()
        };

        let mut intra = Vec::new();
        let mut inter = Vec::new();
        let mut violations = 0usize;
        for &len in &cfg.test_lengths_s {
            let tests = test_segments_at(&segments, len, cfg.segments.segment_s);
            if tests.is_empty() {
                return Err(Error::InsufficientData(format!("no test segments at {len} s")));
            }
            if let Some(enrolled) = &enrolled {
                let scored = tests
                    .par_iter()
                    .map(|s| {
                        let x = lookup(&vectors, &s.id(), "i-vector")?.values();
                        let prefix = format!("{}:", s.speaker);
                        let (within, within_scores) = enrolled.classify_among(x, |l| l.starts_with(&prefix))?;
                        let (all, all_scores) = enrolled.classify(x)?;
                        Ok((within, within_scores, all, all_scores))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut intra_csv = Vec::new();
                let mut inter_csv = Vec::new();
                for (s, (within, ws_scores, all, all_scores)) in tests.iter().zip(scored) {
                    let id = s.id();
                    write_scores_csv(&mut intra_csv, &id, &ws_scores).map_err(|e| Error::io(&scores_dir, e))?;
                    write_scores_csv(&mut inter_csv, &id, &all_scores).map_err(|e| Error::io(&scores_dir, e))?;
                    if all == s.label() && within != s.label() {
                        violations += 1;
                    }
                    intra.push(prediction(s, "plda", len, within));
                    inter.push(prediction(s, "plda", len, all));
                }
                std::fs::write(scores_dir.join(format!("plda_intra_{len}s.csv")), intra_csv)
                    .map_err(|e| Error::io(&scores_dir, e))?;
                std::fs::write(scores_dir.join(format!("plda_inter_{len}s.csv")), inter_csv)
                    .map_err(|e| Error::io(&scores_dir, e))?;
            }
            if let Some(inter_model) = &svm_inter {
                let scored = tests
                    .par_iter()
                    .map(|s| {
                        let x = lookup(&vectors, &s.id(), "i-vector")?.values();
                        Ok((svm_intra[&s.speaker].predict(x)?, inter_model.predict(x)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                for (s, (within, all)) in tests.iter().zip(scored) {
                    intra.push(prediction(s, "svm", len, within));
                    inter.push(prediction(s, "svm", len, all));
                }
            }
        }
        if enrolled.is_some() {
            let verdict = if violations == 0 { "OK" } else { "FAIL" };
            ws.log(&format!("check plda intra>=inter: violations={violations} {verdict}"))?;
            if violations > 0 {
                return Err(Error::Numeric(format!(
                    "{violations} segment(s) correct among all classes but wrong within the speaker"
                )));
            }
        }

        let mut classifiers = Vec::new();
        if cfg.classifiers.plda() {
            classifiers.push("plda".to_string());
        }
        if cfg.classifiers.svm() {
            classifiers.push("svm".to_string());
        }
        let make = |evaluation, system, classifiers: Vec<String>, preds| {
            EvaluationReport::new(evaluation, system, classifiers, cfg.test_lengths_s.clone(), preds, hash.clone(), cfg.seed)
        };
        let intra = make(Evaluation::Intra, System::IVector, classifiers.clone(), intra)?;
        let inter = make(Evaluation::Inter, System::IVector, classifiers.clone(), inter)?;

        let baseline = if cfg.baseline {
            let base = read_baseline_csv(&read_text(&ws.baseline())?)?;
            let z = ZScore::parse(&read_text(&ws.backend_dir().join("baseline_zscore.tsv"))?)?;
            let models: BTreeMap<String, LinearSvmModel> = speakers
                .iter()
                .map(|s| Ok((s.clone(), LinearSvmModel::load(&baseline_svm_path(ws, s))?)))
                .collect::<Result<_>>()?;
            let mut preds = Vec::new();
            for &len in &cfg.test_lengths_s {
                for s in test_segments_at(&segments, len, cfg.segments.segment_s) {
                    let x = z.apply(lookup(&base, &s.id(), "baseline vector")?);
                    preds.push(prediction(s, "svm", len, models[&s.speaker].predict(&x)?));
                }
            }
            Some(make(Evaluation::Intra, System::Baseline, vec!["svm".into()], preds)?)
        } else {
            None
        };

        let outcome = EvaluationOutcome { intra, inter, baseline };
        write_reports(ws, &outcome)?;
        for r in outcome.reports() {
            for c in &r.classifiers {
                let avgs: Vec<String> = r
                    .lengths_s
                    .iter()
                    .map(|l| format!("{l}s={:.2}", r.average(c, *l).unwrap_or(f64::NAN)))
                    .collect();
                ws.log(&format!("evaluate: {} {} {c} average {}", r.evaluation.as_str(), r.system.as_str(), avgs.join(" ")))?;
            }
        }
        Ok(outcome)
    })
}

fn prediction(s: &Segment, classifier: &str, length_s: f64, predicted: String) -> Prediction {
    Prediction {
        actor: s.speaker.clone(),
        classifier: classifier.into(),
        length_s,
        segment: s.id(),
        truth: s.label(),
        predicted,
    }
}

fn write_reports(ws: &Workspace, outcome: &EvaluationOutcome) -> Result<()> {
    let dir = ws.reports_dir();
    let conf = dir.join("confusion");
    ws.ensure_dir(&conf)?;
    for r in outcome.reports() {
        let stem = r.stem();
        write_text(&dir.join(format!("{stem}.txt")), &r.to_text())?;
        write_text(&dir.join(format!("{stem}.tsv")), &r.to_tsv())?;
        write_text(&dir.join(format!("{stem}_predictions.tsv")), &r.predictions_tsv())?;
        for c in &r.classifiers {
            for l in &r.lengths_s {
                write_text(&conf.join(format!("{stem}_{c}_{l}s.tsv")), &r.confusion_tsv(c, *l))?;
            }
        }
    }
    if let Some(b) = &outcome.baseline {
        let clf = if outcome.intra.classifiers.iter().any(|c| c == "plda") { "plda" } else { "svm" };
        write_text(&dir.join("comparison.txt"), &comparison_text(&outcome.intra, clf, b, "svm"))?;
    }
    Ok(())
}

/// LDA scatter of one speaker's full-length segments and per-quality spectrograms.
pub fn plot(ws: &Workspace, cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    timed(ws, "plot", || {
        let segments = load_segments(ws, cfg)?;
        verify_stamps(&[ws.lda(), ws.raw_ivectors(), ws.recordings()], cfg)?;
        let manifest = RecordingManifest::load(&ws.recordings())?;
        let speaker = match &cfg.plot_speaker {
            Some(s) => s.clone(),
            None => manifest
                .speakers()
                .first()
                .map(|s| s.to_string())
                .ok_or_else(|| Error::InsufficientData("no speakers".into()))?,
        };
        let dir = ws.plots_dir();
        ws.ensure_dir(&dir)?;
        let lda = LdaTransform::load(&ws.lda())?;
        let raw = load_ivectors(&ws.raw_ivectors(), cfg)?;
        let mut points = Vec::new();
        for s in segments.iter().filter(|s| s.speaker == speaker && s.part.is_none()) {
            let v = lda.center(&lda.project(lookup(&raw, &s.id(), "i-vector")?)?)?;
            points.push(plots::ScatterPoint {
                id: s.id(),
                label: s.quality.as_str().to_string(),
                values: v.values().to_vec(),
            });
        }
        if points.is_empty() {
            return Err(Error::InsufficientData(format!("speaker {speaker} has no segments")));
        }
        let mut written = plots::export_lda_scatter(&points, &dir, &format!("lda_scatter_{speaker}"))?;

        let mut clips = Vec::new();
        for q in Quality::ALL {
            let rec = manifest
                .recordings
                .iter()
                .find(|r| r.speaker == speaker && r.quality == q)
                .ok_or_else(|| Error::InsufficientData(format!("speaker {speaker} has no {q} recording")))?;
            let audio = read_wav(&rec.path)?;
            clips.push((q, excerpt(&audio, cfg.segments.trim_s, cfg.spectrogram_seconds)?));
        }
        written.extend(plots::export_spectrograms(&clips, &dir, &speaker, cfg.spectrogram_max_hz)?);
        for p in &written {
            ws.log(&format!("plot: wrote {}", p.file_name().unwrap_or_default().to_string_lossy()))?;
        }
        Ok(written)
    })
}

fn excerpt(audio: &AudioClip, start_s: f64, len_s: f64) -> Result<AudioClip> {
    let fs = audio.sample_rate_hz() as f64;
    let len = ((len_s * fs).round() as usize).min(audio.len());
    let start = ((start_s * fs).round() as usize).min(audio.len() - len);
    audio.slice(start, len, audio.source_id().to_string())
}

/// Artifacts removed by a forced pipeline run.
const RUN_ARTIFACTS: &[&str] = &[
    "recordings.tsv",
    "segments.tsv",
    "features",
    "baseline.csv",
    "ubm.vqgm",
    "tv.vqtv",
    "ivectors_raw.csv",
    "lda.vqld",
    "ivectors.csv",
    "backend",
    "audit",
    "reports",
    "plots",
    "run.log",
    "config.resolved",
];

fn clear_run(ws: &Workspace) -> Result<()> {
    for name in RUN_ARTIFACTS {
        let p = ws.path(name);
        let res = if p.is_dir() {
            std::fs::remove_dir_all(&p)
        } else if p.exists() {
            std::fs::remove_file(&p)
        } else {
            Ok(())
        };
        res.map_err(|e| Error::io(&p, e))?;
        let stamp = super::workspace::stamp_path(&p);
        if stamp.exists() {
            std::fs::remove_file(&stamp).map_err(|e| Error::io(&stamp, e))?;
        }
    }
    Ok(())
}

/// Runs every stage in order into a fresh run directory.
pub fn run_pipeline(root: &Path, cfg: &PipelineConfig, manifest: &RecordingManifest, force: bool) -> Result<EvaluationOutcome> {
    let occupied = root.is_dir() && std::fs::read_dir(root).map_err(|e| Error::io(root, e))?.next().is_some();
    if occupied && !force {
        return Err(Error::Config(format!(
            "run directory {} is not empty; pass --force to reuse it",
            root.display()
        )));
    }
    let ws = Workspace::create(root)?;
    clear_run(&ws)?;
    ws.log(&format!("pipeline: config_hash={} seed={}", cfg.hash(), cfg.seed))?;
    let start = Instant::now();
    ingest(&ws, cfg, manifest, true)?;
    extract_features(&ws, cfg, true)?;
    train_ubm(&ws, cfg, true)?;
    train_tv(&ws, cfg, true)?;
    extract_ivectors(&ws, cfg, true)?;
    fit_postproc(&ws, cfg, true)?;
    train_backend(&ws, cfg, true)?;
    let outcome = evaluate(&ws, cfg)?;
    plot(&ws, cfg)?;
    ws.log(&format!("pipeline: done in {:.2} s", start.elapsed().as_secs_f64()))?;
    Ok(outcome)
}
