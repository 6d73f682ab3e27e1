//! The record written beside every experiment's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use hierlog::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::spec::ExperimentSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub dataset: String,
    /// `None` for generated inputs.
    pub path: Option<PathBuf>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub seed: u64,
    pub spec: ExperimentSpec,
    pub inputs: Vec<InputHash>,
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub best_epoch: Option<usize>,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn new(spec: &ExperimentSpec) -> Self {
        Self {
            tool: concat!("hierlog ", env!("CARGO_PKG_VERSION")).to_string(),
            seed: spec.seed,
            spec: spec.clone(),
            inputs: Vec::new(),
            status: "running".into(),
            failed_stage: None,
            error: None,
            best_epoch: None,
            artifacts: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a file, or of a directory as the sorted list of
/// `relative-path  file-hash` lines.
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_file() {
        return Ok(sha256_hex(&fs::read(path)?));
    }
    let mut lines = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(path).unwrap_or(&p).to_string_lossy().replace('\\', "/");
                lines.push(format!("{rel}  {}", sha256_hex(&fs::read(&p)?)));
            }
        }
    }
    lines.sort();
    Ok(sha256_hex(lines.join("\n").as_bytes()))
}
