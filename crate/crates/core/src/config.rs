//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. `include <path>`
//! splices another file (relative to the including file) at that point;
//! later assignments override earlier ones.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Prefix for environment overrides: `VQID_UBM_COMPONENTS=64` sets `ubm_components`.
pub const ENV_PREFIX: &str = "VQID_";

const MAX_INCLUDE_DEPTH: usize = 16;

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

#[derive(Debug, PartialEq)]
enum Line {
    Assign(String, String),
    Include(String),
}

fn parse_line(raw: &str, lineno: usize, what: &str) -> Result<Option<Line>> {
    let line = raw.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    if let Some((key, value)) = line.split_once('=') {
        let key = key.trim();
        if !valid_key(key) {
            return Err(Error::Config(format!("{what}:{lineno}: invalid key {key:?}")));
        }
        return Ok(Some(Line::Assign(key.to_string(), value.trim().to_string())));
    }
    if let Some(rest) = line.strip_prefix("include") {
        let path = rest.trim();
        if !path.is_empty() && rest.starts_with(char::is_whitespace) {
            return Ok(Some(Line::Include(path.to_string())));
        }
    }
    Err(Error::Config(format!("{what}:{lineno}: expected `key = value`")))
}

/// Parses assignments from a single text, rejecting `include`.
pub fn parse_key_values(text: &str, what: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        match parse_line(raw, i + 1, what)? {
            Some(Line::Assign(k, v)) => out.push((k, v)),
            Some(Line::Include(_)) => {
                return Err(Error::Config(format!("{what}:{}: include not allowed here", i + 1)))
            }
            None => {}
        }
    }
    Ok(out)
}

/// Loads a file, resolving includes.
pub fn load_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    load_into(path, &mut out, &mut Vec::new())?;
    Ok(out)
}

fn load_into(path: &Path, out: &mut BTreeMap<String, String>, stack: &mut Vec<PathBuf>) -> Result<()> {
    let canonical = path.canonicalize().map_err(|e| Error::io(path, e))?;
    if stack.contains(&canonical) {
        return Err(Error::Config(format!("include cycle at {}", path.display())));
    }
    if stack.len() >= MAX_INCLUDE_DEPTH {
        return Err(Error::Config("includes nested too deeply".into()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    stack.push(canonical);
    let what = path.display().to_string();
    for (i, raw) in text.lines().enumerate() {
        match parse_line(raw, i + 1, &what)? {
            Some(Line::Assign(k, v)) => {
                out.insert(k, v);
            }
            Some(Line::Include(rel)) => {
                let base = path.parent().unwrap_or(Path::new("."));
                load_into(&base.join(rel), out, stack)?;
            }
            None => {}
        }
    }
    stack.pop();
    Ok(())
}

/// Applies `VQID_*` overrides from the given variables.
pub fn apply_env_overrides<I>(map: &mut BTreeMap<String, String>, vars: I)
where
    I: IntoIterator<Item = (String, String)>,
{
    for (name, value) in vars {
        if let Some(key) = name.strip_prefix(ENV_PREFIX) {
            let key = key.to_ascii_lowercase();
            if valid_key(&key) {
                map.insert(key, value.trim().to_string());
            }
        }
    }
}
