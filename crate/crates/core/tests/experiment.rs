use std::path::Path;

use vqid_core::audio::write_wav_i16;
use vqid_core::corpus::{synthesize_corpus, synthesize_recording, Quality, Recording, SpeakerProfile, SynthConfig};
use vqid_core::dsp::{spectrogram, SpectrogramConfig};
use vqid_core::experiment::plots::{export_lda_scatter, ScatterPoint};
use vqid_core::experiment::{self as ex, EvaluationReport, PipelineConfig, Workspace};
use vqid_core::{Error, LdaTransform, RecordingManifest};

const FS: u32 = 16_000;

/// Small protocol: 1 s trims, 2 s segments, 10 train / 20 test per recording.
const SMALL: &str = "
trim_s = 1
segment_s = 2
max_segments = 30
train_segments = 10
test_lengths_s = 2,1
ubm_components = 16
ubm_em_iters = 8
ubm_kmeans_iters = 5
ivector_dim = 12
tv_em_iters = 4
lda_dim = 4
plda_em_iters = 10
spectrogram_seconds = 1
";

fn small_config(extra: &str) -> PipelineConfig {
    PipelineConfig::from_text(&format!("{SMALL}\n{extra}"), None).unwrap()
}

fn small_corpus(root: &Path, speakers: usize) -> RecordingManifest {
    synthesize_corpus(
        root,
        &SynthConfig {
            seed: 3,
            n_speakers: speakers,
            duration_s: 62.0,
            sample_rate_hz: FS,
        },
    )
    .unwrap()
}

#[test]
fn indistinguishable_classes_score_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let profile = SpeakerProfile::draw(5, 0);
    let mut recordings = Vec::new();
    for (k, q) in Quality::ALL.into_iter().enumerate() {
        // every "quality" is habitual voice from the same speaker
        let clip = synthesize_recording(&profile, Quality::Normal, 62.0, FS, 100 + k as u64).unwrap();
        let path = dir.path().join(format!("{q}.wav"));
        write_wav_i16(&path, &clip).unwrap();
        recordings.push(Recording {
            speaker: profile.id.clone(),
            quality: q,
            path,
            duration_s: clip.duration_s(),
            sample_rate_hz: FS,
        });
    }
    let manifest = RecordingManifest::new(recordings).unwrap();
    let cfg = small_config("test_lengths_s = 2\nclassifiers = plda\nbaseline = false");
    let out = ex::run_pipeline(&dir.path().join("run"), &cfg, &manifest, false).unwrap();
    let acc = out.intra.average("plda", 2.0).unwrap();
    assert!((acc - 20.0).abs() <= 10.0, "accuracy {acc}");
}

#[test]
fn two_speaker_pipeline_reports_and_figures() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(&dir.path().join("corpus"), 2);
    let cfg = small_config("lda_dim = 9");
    let run = dir.path().join("run");
    let out = ex::run_pipeline(&run, &cfg, &manifest, false).unwrap();

    // inter-speaker label space is speakers x qualities
    assert_eq!(out.inter.labels.len(), 10);
    let m = out.inter.confusion("plda", 2.0);
    assert_eq!((m.len(), m[0].len()), (10, 10));
    assert_eq!(m.iter().flatten().sum::<usize>(), 2 * 5 * 20);
    assert_eq!(out.intra.confusion("plda", 1.0).iter().flatten().sum::<usize>(), 2 * 5 * 40);

    // intra restricts the inter label space, so it cannot do worse
    for l in [2.0, 1.0] {
        assert!(out.intra.average("plda", l).unwrap() >= out.inter.average("plda", l).unwrap());
    }

    // the baseline report shares the i-vector report's rows and columns
    let base = out.baseline.as_ref().unwrap();
    assert_eq!(base.actors, out.intra.actors);
    assert_eq!(base.lengths_s, out.intra.lengths_s);
    assert_eq!(base.labels, out.intra.labels);
    let header = |r: &EvaluationReport| r.to_tsv().lines().nth(1).unwrap().to_string();
    assert_eq!(header(base), header(&out.intra));
    for r in out.reports() {
        for c in &r.classifiers {
            for l in &r.lengths_s {
                let avg = r.average(c, *l).unwrap();
                let mean = r.actors.iter().map(|a| r.accuracy(a, c, *l).unwrap()).sum::<f64>() / r.actors.len() as f64;
                assert!((avg - mean).abs() < 0.05);
                assert!((0.0..=100.0).contains(&avg));
            }
        }
    }

    let ws = Workspace::open(&run).unwrap();
    let reports: Vec<String> = std::fs::read_dir(ws.reports_dir())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    for name in ["intra-speaker_ivector.txt", "inter-speaker_ivector.tsv", "intra-speaker_baseline.txt", "comparison.txt"] {
        assert!(reports.iter().any(|r| r == name), "missing {name}");
    }
    let text = std::fs::read_to_string(ws.reports_dir().join("intra-speaker_ivector.txt")).unwrap();
    assert!(text.contains(&cfg.hash()));

    // five spectrograms and the scatter for the first speaker
    let plots: Vec<String> = std::fs::read_dir(ws.plots_dir())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(plots.iter().filter(|p| p.ends_with(".png")).count(), 5);
    assert!(plots.iter().any(|p| p == "lda_scatter_spk01.svg"));
    let scatter = std::fs::read_to_string(ws.plots_dir().join("lda_scatter_spk01.tsv")).unwrap();
    assert_eq!(scatter.lines().count(), 1 + 5 * 30);

    // audit lines for every trained component, all clean
    let audits = ex::parse_audit_lines(&ws.read_log().unwrap());
    for c in ex::AUDITED_COMPONENTS {
        assert!(audits.iter().any(|(name, _, _, test, ok)| name == c && *test == 0 && *ok), "{c}");
    }
    assert!(audits.iter().all(|a| a.4));

    // evaluation refuses artifacts produced by another configuration
    let other = small_config("lda_dim = 9\nplda_em_iters = 11");
    assert!(matches!(ex::evaluate(&ws, &other), Err(Error::Config(_))));

    // a second run with the same seed reproduces every report byte for byte
    let run2 = dir.path().join("run2");
    ex::run_pipeline(&run2, &cfg, &manifest, false).unwrap();
    for name in &reports {
        let a = ws.reports_dir().join(name);
        if a.is_file() {
            assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(run2.join("reports").join(name)).unwrap(), "{name}");
        }
    }
}

#[test]
fn missing_quality_and_occupied_run_dir_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = small_corpus(&dir.path().join("corpus"), 2);
    let cfg = small_config("lda_dim = 9");
    std::fs::create_dir_all(dir.path().join("busy")).unwrap();
    std::fs::write(dir.path().join("busy/file"), "x").unwrap();
    assert!(matches!(
        ex::run_pipeline(&dir.path().join("busy"), &cfg, &manifest, false),
        Err(Error::Config(_))
    ));
    manifest.recordings.retain(|r| r.quality != Quality::Twang);
    let err = ex::run_pipeline(&dir.path().join("run"), &cfg, &manifest, false).unwrap_err();
    assert!(matches!(err, Error::InsufficientData(_)), "{err}");
    // an LDA dimension beyond classes - 1 is caught before feature extraction
    let full = small_corpus(&dir.path().join("corpus2"), 2);
    let err = ex::run_pipeline(&dir.path().join("run2"), &small_config("lda_dim = 10"), &full, false).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(!dir.path().join("run2/features").exists());
}

fn silhouette(points: &[(f64, f64, String)]) -> f64 {
    let dist = |a: &(f64, f64, String), b: &(f64, f64, String)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let mut labels: Vec<&str> = points.iter().map(|p| p.2.as_str()).collect();
    labels.sort();
    labels.dedup();
    let mut total = 0.0;
    for p in points {
        let mean_to = |l: &str| {
            let others: Vec<f64> = points
                .iter()
                .filter(|q| q.2 == l && !std::ptr::eq(*q, p))
                .map(|q| dist(p, q))
                .collect();
            others.iter().sum::<f64>() / others.len() as f64
        };
        let a = mean_to(&p.2);
        let b = labels
            .iter()
            .filter(|l| **l != p.2)
            .map(|l| mean_to(l))
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / points.len() as f64
}

#[test]
fn separated_classes_give_disjoint_scatter_clusters() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let dim = 12;
    let centers: Vec<Vec<f64>> = (0..5).map(|_| (0..dim).map(|_| rng.gen_range(-6.0..6.0)).collect()).collect();
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..40 {
            vectors.push(c.iter().map(|m| m + rng.gen_range(-0.5..0.5)).collect::<Vec<f64>>());
            labels.push(Quality::ALL[k].as_str());
        }
    }
    let refs: Vec<&[f64]> = vectors.iter().map(Vec::as_slice).collect();
    let lda = LdaTransform::fit(&refs, &labels, 4).unwrap();
    let points: Vec<ScatterPoint> = vectors
        .iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (v, l))| {
            let iv = vqid_core::IVector::new(format!("u{i}"), vqid_core::Stage::Raw, v.clone()).unwrap();
            ScatterPoint {
                id: iv.id().to_string(),
                label: l.to_string(),
                values: lda.center(&lda.project(&iv).unwrap()).unwrap().values().to_vec(),
            }
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let files = export_lda_scatter(&points, dir.path(), "scatter").unwrap();
    let rows: Vec<(f64, f64, String)> = std::fs::read_to_string(&files[0])
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].to_string())
        })
        .collect();
    assert_eq!(rows.len(), points.len());
    let s = silhouette(&rows);
    assert!(s > 0.5, "silhouette {s}");
}

/// Mean spectral flatness of 400 Hz sub-bands between 2 and 5 kHz: close to
/// 1 for noise, low where harmonics stand out.
fn high_band_flatness(clip: &vqid_core::AudioClip) -> f64 {
    let spec = spectrogram(clip, &SpectrogramConfig::default()).unwrap();
    let lo = (2000.0 / spec.bin_hz).ceil() as usize;
    let hi = ((5000.0 / spec.bin_hz).floor() as usize).min(spec.n_bins - 1);
    let width = (400.0 / spec.bin_hz).round() as usize;
    let mut total = 0.0;
    let mut bands = 0;
    for t in 0..spec.n_frames {
        let frame = spec.frame(t);
        let mut b = lo;
        while b + width <= hi {
            let power: Vec<f64> = frame[b..b + width].iter().map(|m| m * m + 1e-20).collect();
            let mean = power.iter().sum::<f64>() / power.len() as f64;
            let geo = (power.iter().map(|p| p.ln()).sum::<f64>() / power.len() as f64).exp();
            total += geo / mean;
            bands += 1;
            b += width;
        }
    }
    total / bands as f64
}

#[test]
fn breathy_high_band_is_flatter_than_normal() {
    for index in 0..4 {
        let p = SpeakerProfile::draw(21, index);
        let normal = synthesize_recording(&p, Quality::Normal, 3.0, 44_100, 21).unwrap();
        let breathy = synthesize_recording(&p, Quality::Breathy, 3.0, 44_100, 21).unwrap();
        let (n, b) = (high_band_flatness(&normal), high_band_flatness(&breathy));
        assert!(b > n, "speaker {index}: breathy {b} vs normal {n}");
    }
}
