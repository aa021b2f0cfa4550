//! Run manifests, output-path policy, and hashing.
//!
//! Every subcommand writes `manifest.json` into the output directory before
//! dispatching: resolved configuration with all defaults echoed, sha256 of
//! every input file, the toolkit version, and the seed. The manifest carries
//! no timestamps or machine identifiers, so re-runs are byte-identical and a
//! run is reproducible from its manifest alone.

use std::fmt::Write as _;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Manifest format version.
pub const MANIFEST_VERSION: u32 = 1;

/// Why a run stopped. Validation failures exit 2, certification failures 3.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Uncertified(String),
}

impl Failure {
    pub fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Uncertified(m) => m,
        }
    }
}

impl From<rgmdt::Error> for Failure {
    fn from(e: rgmdt::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

pub type CmdResult<T> = Result<T, Failure>;

pub fn validation<T>(msg: impl Into<String>) -> CmdResult<T> {
    Err(Failure::Validation(msg.into()))
}

#[derive(Serialize)]
pub struct InputHash {
    /// Path as given on the command line.
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct Manifest {
    pub version: u32,
    pub toolkit_version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub jobs: Option<usize>,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    /// Artifact paths, relative to the output directory.
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").expect("writing to a String cannot fail");
    }
    out
}

pub fn read_text(path: &Path) -> CmdResult<String> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))
}

/// Resolve an output path against the output directory. Absolute paths and
/// `..` components are rejected: no subcommand writes outside --out-dir.
pub fn resolve_out(out_dir: &Path, rel: &str) -> CmdResult<PathBuf> {
    let p = Path::new(rel);
    if p.as_os_str().is_empty() {
        return validation("output path must not be empty");
    }
    if p.is_absolute()
        || p.components()
            .any(|c| matches!(c, Component::ParentDir | Component::Prefix(_)))
    {
        return validation(format!(
            "output path '{rel}' must stay inside --out-dir: give a relative path without '..'"
        ));
    }
    Ok(out_dir.join(p))
}

/// Write one artifact under the output directory, creating parents.
pub fn write_artifact(path: &Path, contents: &str) -> CmdResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| {
            Failure::Validation(format!("cannot create {}: {e}", parent.display()))
        })?;
    }
    fs::write(path, contents)
        .map_err(|e| Failure::Validation(format!("cannot write {}: {e}", path.display())))
}

/// Serialize and write `manifest.json` into the output directory.
pub fn write_manifest(out_dir: &Path, manifest: &Manifest) -> CmdResult<PathBuf> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Failure::Validation(format!("cannot serialize manifest: {e}")))?;
    let path = out_dir.join("manifest.json");
    write_artifact(&path, &(text + "\n"))?;
    Ok(path)
}
