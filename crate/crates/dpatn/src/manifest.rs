//! Tab-separated dataset manifests.
//!
//! One pair per line: `observation<TAB>target[<TAB>clean]`. The optional
//! third column names the haze-free image used for evaluation. Blank lines
//! and lines starting with `#` are ignored; relative paths resolve against
//! the manifest's directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dpatn_core::training::TrainingPair;
use dpatn_core::ImageRgb;

use crate::error::{Error, Result};
use crate::io::{load_field, load_image};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub observation: PathBuf,
    pub target: PathBuf,
    pub clean: Option<PathBuf>,
}

pub fn parse_manifest(text: &str, base: &Path, path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&cols.len()) || cols.iter().any(|c| c.trim().is_empty()) {
            return Err(Error::parse(
                path,
                format!("line {}: expected 2 or 3 tab-separated paths, found {}", no + 1, cols.len()),
            ));
        }
        let resolve = |c: &str| base.join(c.trim());
        out.push(ManifestEntry {
            observation: resolve(cols[0]),
            target: resolve(cols[1]),
            clean: cols.get(2).map(|c| resolve(c)),
        });
    }
    if out.is_empty() {
        return Err(Error::parse(path, "manifest lists no pairs"));
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, base, path)
}

/// Renders entries with their paths written as given.
pub fn manifest_to_string(entries: &[ManifestEntry]) -> String {
    let mut s = String::from("# observation\ttarget\tclean\n");
    for e in entries {
        let _ = write!(s, "{}\t{}", e.observation.display(), e.target.display());
        if let Some(c) = &e.clean {
            let _ = write!(s, "\t{}", c.display());
        }
        s.push('\n');
    }
    s
}

/// A loaded manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPair {
    pub pair: TrainingPair,
    pub clean: Option<ImageRgb>,
}

pub fn load_entry(entry: &ManifestEntry) -> Result<LoadedPair> {
    let observation = load_image(&entry.observation)?;
    let target = load_field(&entry.target)?;
    let pair = TrainingPair::new(observation, target).map_err(|e| {
        Error::parse(&entry.target, format!("does not match {}: {e}", entry.observation.display()))
    })?;
    let clean = entry.clean.as_deref().map(load_image).transpose()?;
    if let Some(c) = &clean {
        if c.shape() != pair.observation.shape() {
            return Err(Error::parse(entry.clean.as_deref().unwrap(), "clean image shape differs from observation"));
        }
    }
    Ok(LoadedPair { pair, clean })
}
