//! `manifest.json`: every artifact of a run with its class and SHA-256.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Every class a full run emits.
pub const ARTIFACT_CLASSES: [&str; 14] = [
    "panel",
    "returns",
    "surface",
    "dd",
    "kde",
    "trajectory",
    "breaks",
    "breaks_matrix",
    "extremes",
    "returns_matrix",
    "affinity",
    "risk_adjusted",
    "persistence",
    "dendrogram",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub class: String,
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// Sorted by path.
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    /// Hash `(class, relative path)` entries under `root`.
    pub fn build(root: &Path, entries: &[(String, String)]) -> Result<Self, CliError> {
        let mut artifacts = entries
            .iter()
            .map(|(class, path)| {
                Ok(Artifact { class: class.clone(), path: path.clone(), sha256: sha256_file(&root.join(path))? })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        artifacts.dedup_by(|a, b| a.path == b.path);
        Ok(Self { version: MANIFEST_VERSION, artifacts })
    }

    pub fn classes(&self) -> BTreeSet<&str> {
        self.artifacts.iter().map(|a| a.class.as_str()).collect()
    }

    pub fn write(&self, root: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(marketdyn::Error::from)?;
        text.push('\n');
        std::fs::write(root.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn read(root: &Path) -> Result<Self, CliError> {
        let path = root.join(MANIFEST_FILE);
        let file = std::fs::File::open(&path).map_err(|e| {
            CliError::Usage(format!("cannot open {}: {e}", path.display()))
        })?;
        Ok(serde_json::from_reader(file).map_err(marketdyn::Error::from)?)
    }

    /// Files that are missing or whose hash changed.
    pub fn verify(&self, root: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter_map(|a| match sha256_file(&root.join(&a.path)) {
                Ok(h) if h == a.sha256 => None,
                Ok(_) => Some(format!("{}: hash mismatch", a.path)),
                Err(_) => Some(format!("{}: missing", a.path)),
            })
            .collect()
    }
}
