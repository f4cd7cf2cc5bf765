//! Working directory layout, artifact stamps, run log and leakage audit.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::PipelineConfig;
use crate::corpus::{Role, SegmentSet};
use crate::error::{Error, Result};

pub const RUN_LOG: &str = "run.log";

/// Files and directories inside a run directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Opens (creating if needed) a run directory.
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Workspace { root: root.to_path_buf() })
    }

    /// Opens an existing run directory.
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::MissingArtifact(root.to_path_buf()));
        }
        Ok(Workspace { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn recordings(&self) -> PathBuf {
        self.path("recordings.tsv")
    }

    pub fn segments(&self) -> PathBuf {
        self.path("segments.tsv")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.path("features")
    }

    pub fn feature_file(&self, segment_id: &str) -> PathBuf {
        self.features_dir().join(format!("{segment_id}.vqft"))
    }

    pub fn baseline(&self) -> PathBuf {
        self.path("baseline.csv")
    }

    pub fn ubm(&self) -> PathBuf {
        self.path("ubm.vqgm")
    }

    pub fn tv(&self) -> PathBuf {
        self.path("tv.vqtv")
    }

    pub fn raw_ivectors(&self) -> PathBuf {
        self.path("ivectors_raw.csv")
    }

    pub fn lda(&self) -> PathBuf {
        self.path("lda.vqld")
    }

    pub fn ivectors(&self) -> PathBuf {
        self.path("ivectors.csv")
    }

    pub fn backend_dir(&self) -> PathBuf {
        self.path("backend")
    }

    pub fn audit_dir(&self) -> PathBuf {
        self.path("audit")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.path("reports")
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.path("plots")
    }

    pub fn run_log(&self) -> PathBuf {
        self.path(RUN_LOG)
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.path("config.resolved")
    }

    pub fn ensure_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }

    /// Writes the resolved configuration next to the artifacts.
    pub fn write_config(&self, cfg: &PipelineConfig) -> Result<()> {
        let path = self.resolved_config();
        let text = format!("# config_hash={}\n{}", cfg.hash(), cfg.to_text());
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Appends one line to the run log (and mirrors it to the logger).
    pub fn log(&self, line: &str) -> Result<()> {
        log::info!("{line}");
        let path = self.run_log();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
    }

    pub fn read_log(&self) -> Result<String> {
        let path = self.run_log();
        std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    }

    /// Fails with [`Error::MissingArtifact`] unless every path exists.
    pub fn require(&self, paths: &[PathBuf]) -> Result<()> {
        match paths.iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::MissingArtifact(p.clone())),
            None => Ok(()),
        }
    }
}

/// The `.hash` sidecar of an artifact.
pub fn stamp_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".hash");
    artifact.with_file_name(name)
}

/// Records the configuration hash and seed that produced `artifact`.
pub fn write_stamp(artifact: &Path, cfg: &PipelineConfig) -> Result<()> {
    let path = stamp_path(artifact);
    let text = format!("config_hash={}\nseed={}\n", cfg.hash(), cfg.seed);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads the configuration hash stamped on `artifact`.
pub fn read_stamp(artifact: &Path) -> Result<String> {
    if !artifact.exists() {
        return Err(Error::MissingArtifact(artifact.to_path_buf()));
    }
    let path = stamp_path(artifact);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .find_map(|l| l.strip_prefix("config_hash="))
        .map(str::to_string)
        .ok_or_else(|| Error::format("artifact stamp", format!("{} has no config_hash", path.display())))
}

/// Checks that every artifact exists and was produced by `cfg`.
pub fn verify_stamps(artifacts: &[PathBuf], cfg: &PipelineConfig) -> Result<()> {
    let want = cfg.hash();
    for a in artifacts {
        let got = read_stamp(a)?;
        if got != want {
            return Err(Error::Config(format!(
                "{} was produced with config {} but the current config is {}",
                a.display(),
                &got[..got.len().min(12)],
                &want[..12]
            )));
        }
    }
    Ok(())
}

/// Refuses to replace an artifact stamped with another configuration unless forced.
pub fn check_overwrite(artifact: &Path, cfg: &PipelineConfig, force: bool) -> Result<()> {
    if force || !artifact.exists() {
        return Ok(());
    }
    match read_stamp(artifact) {
        Ok(h) if h == cfg.hash() => Ok(()),
        _ => Err(Error::Config(format!(
            "{} exists from a different configuration; pass --force to replace it",
            artifact.display()
        ))),
    }
}

/// Role bookkeeping for training inputs.
///
/// Every trained component lists the segment ids it consumed in
/// `audit/<component>.txt`; [`audit_component`] counts their roles against
/// the segment table and writes the verdict to the run log.
pub struct LeakageAudit {
    roles: BTreeMap<String, Role>,
}

/// Components whose training inputs are audited.
pub const AUDITED_COMPONENTS: &[&str] = &[
    "ubm",
    "tv",
    "lda",
    "plda",
    "svm-intra",
    "svm-inter",
    "baseline-zscore",
    "baseline-svm",
];

impl LeakageAudit {
    pub fn new(segments: &SegmentSet) -> Self {
        LeakageAudit {
            roles: segments.iter().map(|s| (s.id(), s.role)).collect(),
        }
    }

    /// Counts `(train, test)` roles among `ids`; unknown ids are an error.
    pub fn count(&self, ids: &[String]) -> Result<(usize, usize)> {
        let mut train = 0;
        let mut test = 0;
        for id in ids {
            match self.roles.get(id) {
                Some(Role::Train) => train += 1,
                Some(Role::Test) => test += 1,
                None => return Err(Error::Leakage(format!("training input {id} is not in the segment table"))),
            }
        }
        Ok((train, test))
    }

    /// Stores the input list, logs the audit line and fails on any test input.
    pub fn record(&self, ws: &Workspace, component: &str, ids: &[String]) -> Result<()> {
        let dir = ws.audit_dir();
        ws.ensure_dir(&dir)?;
        let path = dir.join(format!("{component}.txt"));
        let mut text = ids.join("\n");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.check(ws, component, ids)
    }

    /// Re-audits a component from its stored input list.
    pub fn recheck(&self, ws: &Workspace, component: &str) -> Result<()> {
        let path = ws.audit_dir().join(format!("{component}.txt"));
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let ids: Vec<String> = text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect();
        self.check(ws, component, &ids)
    }

    fn check(&self, ws: &Workspace, component: &str, ids: &[String]) -> Result<()> {
        let (train, test) = self.count(ids)?;
        let verdict = if test == 0 && train > 0 { "OK" } else { "FAIL" };
        ws.log(&format!(
            "audit {component}: inputs={} train={train} test={test} {verdict}",
            ids.len()
        ))?;
        if test > 0 {
            return Err(Error::Leakage(format!("{component} was trained on {test} test segment(s)")));
        }
        if train == 0 {
            return Err(Error::Leakage(format!("{component} has no recorded training inputs")));
        }
        Ok(())
    }
}

/// Parses `audit <component>: inputs=N train=N test=N VERDICT` lines.
pub fn parse_audit_lines(log: &str) -> Vec<(String, usize, usize, usize, bool)> {
    log.lines()
        .filter_map(|line| {
            let rest = line.strip_prefix("audit ")?;
            let (component, fields) = rest.split_once(": ")?;
            let mut it = fields.split_whitespace();
            let mut num = |key: &str| it.next()?.strip_prefix(key)?.parse::<usize>().ok();
            let inputs = num("inputs=")?;
            let train = num("train=")?;
            let test = num("test=")?;
            let ok = it.next()? == "OK";
            Some((component.to_string(), inputs, train, test, ok))
        })
        .collect()
}
