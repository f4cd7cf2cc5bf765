use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vqid_core::corpus::{synthesize_corpus, SynthConfig};
use vqid_core::error::ErrorClass;
use vqid_core::experiment::{self as ex, EvaluationOutcome, PipelineConfig, Workspace};
use vqid_core::{Error, RecordingManifest};

const AFTER_HELP: &str = "\
Configuration is resolved from the built-in defaults, then --config (or the
run directory's config.resolved for stages after ingest), then environment
variables VQID_<KEY> (e.g. VQID_UBM_COMPONENTS=64), then --seed.

Exit status: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure. Errors are printed as one line on stderr.";

/// Voice quality identification: i-vector and acoustic-measure systems.
#[derive(Debug, Parser)]
#[command(name = "vqid", version, after_help = AFTER_HELP)]
struct Cli {
    /// Configuration file (key = value lines, `include <file>` allowed).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for every random stage; overrides the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Replace existing outputs, including ones made with another configuration.
    #[arg(long, global = true)]
    force: bool,

    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct WorkArg {
    /// Run directory holding the pipeline artifacts.
    #[arg(long, value_name = "DIR")]
    work: PathBuf,
}

#[derive(Debug, Args)]
struct ManifestArgs {
    /// Recording manifest (TSV: speaker, quality, path, duration_s, sample_rate_hz).
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,

    /// Run directory for the artifacts.
    #[arg(long, value_name = "DIR")]
    work: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its manifest.
    SynthCorpus {
        /// Output directory; the manifest is written to <DIR>/manifest.tsv.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Number of synthetic speakers.
        #[arg(long, default_value_t = 4)]
        speakers: usize,
        /// Length of each recording in seconds.
        #[arg(long, value_name = "SECONDS", default_value_t = 300.0)]
        duration_s: f64,
        /// Sample rate of the generated WAV files.
        #[arg(long, value_name = "HZ", default_value_t = 44_100)]
        sample_rate: u32,
    },
    /// Segment the manifest's recordings and assign train/test roles.
    Ingest(ManifestArgs),
    /// Compute MFCC features and baseline measure vectors for every segment.
    ExtractFeatures(WorkArg),
    /// Train the universal background model on training segments.
    TrainUbm(WorkArg),
    /// Train the total-variability matrix on training segments.
    TrainTv(WorkArg),
    /// Extract an i-vector for every segment.
    ExtractIvectors(WorkArg),
    /// Fit LDA on training i-vectors and apply LDA, centering and length normalization.
    FitPostproc(WorkArg),
    /// Train the PLDA, SVM and baseline back-ends.
    TrainBackend(WorkArg),
    /// Score the test segments and write the reports.
    Evaluate(WorkArg),
    /// Export the LDA scatter and spectrogram figures.
    Plot(WorkArg),
    /// Run every stage from ingest to plot.
    Pipeline(ManifestArgs),
}

fn error_line(class: &str, code: u8, message: &str) -> String {
    let flat = message.split_whitespace().collect::<Vec<_>>().join(" ").replace('"', "'");
    format!("vqid: error class={class} code={code} message=\"{flat}\"")
}

fn class_code(e: &Error) -> (&'static str, u8) {
    match e.class() {
        ErrorClass::Usage => ("usage", 1),
        ErrorClass::Data => ("data", 2),
        ErrorClass::Numeric => ("numeric", 3),
    }
}

fn resolve_config(cli: &Cli, workspace: Option<&Path>) -> Result<PipelineConfig, Error> {
    let stored = workspace.map(|w| w.join("config.resolved")).filter(|p| p.exists());
    let file = cli.config.clone().or(stored);
    let cfg = PipelineConfig::load(file.as_deref(), std::env::vars())?;
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn print_outcome(outcome: &EvaluationOutcome) {
    for r in outcome.reports() {
        println!("{}", r.to_text());
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::SynthCorpus {
            out,
            speakers,
            duration_s,
            sample_rate,
        } => {
            let cfg = SynthConfig {
                seed: cli.seed.unwrap_or(resolve_config(cli, None)?.seed),
                n_speakers: *speakers,
                duration_s: *duration_s,
                sample_rate_hz: *sample_rate,
            };
            let path = out.join("manifest.tsv");
            if path.exists() && !cli.force {
                return Err(Error::Config(format!("{} exists; pass --force to replace it", path.display())));
            }
            let manifest = synthesize_corpus(out, &cfg)?;
            manifest.save(&path)?;
            println!("{} recordings -> {}", manifest.recordings.len(), path.display());
        }
        Command::Ingest(a) => {
            let cfg = resolve_config(cli, None)?;
            let manifest = RecordingManifest::load(&a.manifest)?;
            let ws = Workspace::create(&a.work)?;
            let segments = ex::ingest(&ws, &cfg, &manifest, cli.force)?;
            println!("{} segments -> {}", segments.len(), ws.segments().display());
        }
        Command::Pipeline(a) => {
            let cfg = resolve_config(cli, None)?;
            let manifest = RecordingManifest::load(&a.manifest)?;
            let outcome = ex::run_pipeline(&a.work, &cfg, &manifest, cli.force)?;
            print_outcome(&outcome);
        }
        Command::ExtractFeatures(w)
        | Command::TrainUbm(w)
        | Command::TrainTv(w)
        | Command::ExtractIvectors(w)
        | Command::FitPostproc(w)
        | Command::TrainBackend(w)
        | Command::Evaluate(w)
        | Command::Plot(w) => {
            let ws = Workspace::open(&w.work)?;
            let cfg = resolve_config(cli, Some(&w.work))?;
            match &cli.command {
                Command::ExtractFeatures(_) => ex::extract_features(&ws, &cfg, cli.force)?,
                Command::TrainUbm(_) => ex::train_ubm(&ws, &cfg, cli.force)?,
                Command::TrainTv(_) => ex::train_tv(&ws, &cfg, cli.force)?,
                Command::ExtractIvectors(_) => ex::extract_ivectors(&ws, &cfg, cli.force)?,
                Command::FitPostproc(_) => ex::fit_postproc(&ws, &cfg, cli.force)?,
                Command::TrainBackend(_) => ex::train_backend(&ws, &cfg, cli.force)?,
                Command::Evaluate(_) => print_outcome(&ex::evaluate(&ws, &cfg)?),
                Command::Plot(_) => {
                    for p in ex::plot(&ws, &cfg)? {
                        println!("{}", p.display());
                    }
                }
                _ => unreachable!("handled above"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", 1, first));
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = class_code(&e);
            eprintln!("{}", error_line(class, code, &e.to_string()));
            ExitCode::from(code)
        }
    }
}
