//! Run manifests: what was run, on which data, and where the outputs went.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use logcl::dataset::DatasetStats;
use logcl::{Split, TemporalKg, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub path: PathBuf,
    pub stats: DatasetStats,
    /// SHA-256 over `stat.txt` and the three split files.
    pub sha256: String,
}

impl DatasetFingerprint {
    pub fn of(root: &Path, kg: &TemporalKg) -> Result<Self> {
        Ok(Self {
            path: root.to_path_buf(),
            stats: kg.stats(),
            sha256: hash_dataset_files(root)?,
        })
    }
}

pub fn hash_dataset_files(root: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let names = std::iter::once("stat.txt").chain(Split::ALL.iter().map(|s| s.file_name()));
    for name in names {
        let path = root.join(name);
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex(&hasher.finalize()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub revision: String,
    pub seed: Option<u64>,
    pub config: Option<TrainConfig>,
    pub config_fingerprint: Option<String>,
    pub dataset: Option<DatasetFingerprint>,
    /// What `prepare` read: the SHA-256 of the raw files or a built-in name.
    pub source: Option<String>,
    pub out_dir: PathBuf,
    /// Artifact name to a path relative to `out_dir`.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        Self {
            command: command.into(),
            revision: revision(),
            seed: None,
            config: None,
            config_fingerprint: None,
            dataset: None,
            source: None,
            out_dir: out_dir.to_path_buf(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn with_config(mut self, config: &TrainConfig) -> Self {
        self.seed = Some(config.seed);
        self.config_fingerprint = Some(config.fingerprint());
        self.config = Some(config.clone());
        self
    }

    /// Writes `contents` under `out_dir` and records it as an artifact.
    pub fn emit(&mut self, name: &str, file: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.out_dir.join(file);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.insert(name.into(), file.into());
        Ok(path)
    }

    /// Records a file that something else already wrote.
    pub fn register(&mut self, name: &str, file: &str) {
        self.artifacts.insert(name.into(), file.into());
    }

    pub fn artifact(&self, name: &str) -> Option<PathBuf> {
        self.artifacts.get(name).map(|f| self.out_dir.join(f))
    }

    pub fn save(&self) -> Result<PathBuf> {
        let path = self.out_dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Loads a manifest from a file or from a run directory. Artifact paths
    /// resolve against the manifest's own directory, so run directories can
    /// be moved.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).with_context(|| format!("reading manifest {}", file.display()))?;
        let mut manifest: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", file.display()))?;
        manifest.out_dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }
}

fn revision() -> String {
    match option_env!("LOGCL_REVISION") {
        Some(rev) => format!("logcl {} ({rev})", env!("CARGO_PKG_VERSION")),
        None => format!("logcl {}", env!("CARGO_PKG_VERSION")),
    }
}
