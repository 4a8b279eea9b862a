//! File-per-artifact run store. A run lives in `runs/<run_id>/`; its
//! `manifest.json` is written last (temp file + rename) and is the commit
//! point: directories without a manifest are invisible to readers.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub const MANIFEST_FORMAT: &str = "influence-run/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store i/o error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("run {0:?} not found")]
    RunNotFound(String),
    #[error("artifact {artifact:?} not found in run {run}")]
    ArtifactNotFound { run: String, artifact: String },
    #[error("invalid artifact name {0:?}")]
    BadName(String),
    #[error("checksum mismatch for {artifact} in run {run}")]
    Checksum { run: String, artifact: String },
    #[error("corrupt manifest for run {run}: {reason}")]
    Manifest { run: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub config_digest: String,
    /// Fully resolved configuration plus derived values.
    pub parameters: serde_json::Value,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    /// Stages deliberately not produced in this run.
    #[serde(default)]
    pub absent: Vec<String>,
}

impl RunManifest {
    pub fn checksum(&self, artifact: &str) -> Option<&str> {
        self.artifacts.get(artifact).map(|a| a.sha256.as_str())
    }
}

/// The resolved configuration plus the lag conversion.
pub fn parameter_block(config: &PipelineConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(config).expect("config serializes");
    if let Some(obj) = v.as_object_mut() {
        obj.insert(
            "derived".into(),
            serde_json::json!({
                "max_lag_windows": config.max_lag_windows(),
                "lag_rule": "floor(windows.lag_days / windows.shift_days)",
            }),
        );
    }
    v
}

/// Where a save currently is; the hook may fail any step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SavePoint<'a> {
    Artifact(&'a str),
    Manifest,
}

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub artifacts: BTreeMap<String, Vec<u8>>,
}

impl LoadedRun {
    pub fn artifact(&self, name: &str) -> Option<&[u8]> {
        self.artifacts.get(name).map(Vec::as_slice)
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.artifact(name).and_then(|b| std::str::from_utf8(b).ok())
    }
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != MANIFEST_FILE
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    fn run_dir(&self, run_id: &str) -> PathBuf {
        self.runs_dir().join(run_id)
    }

    pub fn save_run(
        &self,
        artifacts: &BTreeMap<String, Vec<u8>>,
        config: &PipelineConfig,
        absent: &[String],
    ) -> Result<RunManifest, StoreError> {
        self.save_run_with_hook(artifacts, config, absent, |_| Ok(()))
    }

    /// As [`RunStore::save_run`]; `hook` runs before each file is written and
    /// can abort the save by returning an error.
    pub fn save_run_with_hook(
        &self,
        artifacts: &BTreeMap<String, Vec<u8>>,
        config: &PipelineConfig,
        absent: &[String],
        mut hook: impl FnMut(SavePoint<'_>) -> std::io::Result<()>,
    ) -> Result<RunManifest, StoreError> {
        if let Some(bad) = artifacts.keys().find(|n| !valid_name(n)) {
            return Err(StoreError::BadName(bad.clone()));
        }
        let runs = self.runs_dir();
        fs::create_dir_all(&runs).map_err(io_err(&runs))?;
        let created_at = Utc::now();
        let config_digest = config.digest();
        let stamp = created_at.format("%Y%m%dT%H%M%S%.3fZ");
        let (run_id, dir) = (0u32..)
            .map(|n| {
                let id = format!("{stamp}-{}-{n}", &config_digest[..8]);
                let dir = self.run_dir(&id);
                (id, dir)
            })
            .find_map(|(id, dir)| match fs::create_dir(&dir) {
                Ok(()) => Some(Ok((id, dir))),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => None,
                Err(e) => Some(Err(StoreError::Io { path: dir, source: e })),
            })
            .expect("unbounded counter")?;

        let mut entries = BTreeMap::new();
        for (name, bytes) in artifacts {
            let path = dir.join(name);
            hook(SavePoint::Artifact(name)).map_err(io_err(&path))?;
            fs::write(&path, bytes).map_err(io_err(&path))?;
            entries.insert(name.clone(), ArtifactEntry { sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        }
        let manifest = RunManifest {
            format: MANIFEST_FORMAT.into(),
            run_id,
            created_at,
            config_digest,
            parameters: parameter_block(config),
            artifacts: entries,
            absent: absent.to_vec(),
        };
        let tmp = dir.join(".manifest.json.tmp");
        hook(SavePoint::Manifest).map_err(io_err(&tmp))?;
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        {
            let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(&json).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        let final_path = dir.join(MANIFEST_FILE);
        fs::rename(&tmp, &final_path).map_err(io_err(&final_path))?;
        log::info!("saved run {} ({} artifacts)", manifest.run_id, manifest.artifacts.len());
        Ok(manifest)
    }

    /// Committed runs, oldest first.
    pub fn list_runs(&self) -> Result<Vec<RunManifest>, StoreError> {
        let runs = self.runs_dir();
        let entries = match fs::read_dir(&runs) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::Io { path: runs, source: e }),
        };
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(io_err(&runs))?;
            let Some(id) = entry.file_name().to_str().map(str::to_string) else { continue };
            if !entry.path().join(MANIFEST_FILE).is_file() {
                continue;
            }
            out.push(self.manifest(&id)?);
        }
        out.sort_by(|a, b| (a.created_at, &a.run_id).cmp(&(b.created_at, &b.run_id)));
        Ok(out)
    }

    pub fn manifest(&self, run_id: &str) -> Result<RunManifest, StoreError> {
        if !valid_name(run_id) {
            return Err(StoreError::RunNotFound(run_id.into()));
        }
        let path = self.run_dir(run_id).join(MANIFEST_FILE);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::RunNotFound(run_id.into())),
            Err(e) => return Err(StoreError::Io { path, source: e }),
        };
        let manifest: RunManifest = serde_json::from_slice(&bytes)
            .map_err(|e| StoreError::Manifest { run: run_id.into(), reason: e.to_string() })?;
        if manifest.run_id != run_id {
            return Err(StoreError::Manifest { run: run_id.into(), reason: "run_id does not match directory".into() });
        }
        Ok(manifest)
    }

    /// One artifact, verified against the manifest checksum.
    pub fn read_artifact(&self, manifest: &RunManifest, name: &str) -> Result<Vec<u8>, StoreError> {
        let entry = manifest.artifacts.get(name).ok_or_else(|| StoreError::ArtifactNotFound {
            run: manifest.run_id.clone(),
            artifact: name.into(),
        })?;
        let path = self.run_dir(&manifest.run_id).join(name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(StoreError::Checksum { run: manifest.run_id.clone(), artifact: name.into() });
        }
        Ok(bytes)
    }

    pub fn load_run(&self, run_id: &str) -> Result<LoadedRun, StoreError> {
        let manifest = self.manifest(run_id)?;
        let mut artifacts = BTreeMap::new();
        for name in manifest.artifacts.keys() {
            artifacts.insert(name.clone(), self.read_artifact(&manifest, name)?);
        }
        Ok(LoadedRun { manifest, artifacts })
    }

    /// Uncommitted run directories (no manifest), e.g. from interrupted saves.
    pub fn garbage(&self) -> Result<Vec<PathBuf>, StoreError> {
        let runs = self.runs_dir();
        let Ok(entries) = fs::read_dir(&runs) else { return Ok(Vec::new()) };
        let mut out = Vec::new();
        for entry in entries {
            let path = entry.map_err(io_err(&runs))?.path();
            if path.is_dir() && !path.join(MANIFEST_FILE).is_file() {
                out.push(path);
            }
        }
        out.sort();
        Ok(out)
    }
}

pub fn format_instant(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn artifacts() -> BTreeMap<String, Vec<u8>> {
        [("graph.json", b"{}".to_vec()), ("edges.json", b"[1,2]".to_vec())]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let cfg = PipelineConfig::default();
        let m1 = store.save_run(&artifacts(), &cfg, &[]).unwrap();
        let m2 = store.save_run(&artifacts(), &cfg, &[]).unwrap();
        assert_ne!(m1.run_id, m2.run_id);
        assert_eq!(m1.artifacts, m2.artifacts);
        let loaded = store.load_run(&m1.run_id).unwrap();
        assert_eq!(loaded.artifacts, artifacts());
        assert_eq!(loaded.manifest, m1);
        let listed: Vec<String> = store.list_runs().unwrap().into_iter().map(|m| m.run_id).collect();
        assert_eq!(listed, vec![m1.run_id, m2.run_id]);
    }

    #[test]
    fn interrupted_save_is_invisible() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let err = store
            .save_run_with_hook(&artifacts(), &PipelineConfig::default(), &[], |p| match p {
                SavePoint::Manifest => Err(std::io::Error::other("injected")),
                _ => Ok(()),
            })
            .unwrap_err();
        assert!(matches!(err, StoreError::Io { .. }));
        assert!(store.list_runs().unwrap().is_empty());
        assert_eq!(store.garbage().unwrap().len(), 1);
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let m = store.save_run(&artifacts(), &PipelineConfig::default(), &[]).unwrap();
        fs::write(dir.path().join("runs").join(&m.run_id).join("edges.json"), b"[9]").unwrap();
        assert!(matches!(store.load_run(&m.run_id), Err(StoreError::Checksum { .. })));
        assert!(matches!(store.load_run("missing"), Err(StoreError::RunNotFound(_))));
        assert!(matches!(store.load_run("../x"), Err(StoreError::RunNotFound(_))));
    }

    #[test]
    fn bad_names_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let mut a = artifacts();
        a.insert("../escape".into(), Vec::new());
        assert!(matches!(store.save_run(&a, &PipelineConfig::default(), &[]), Err(StoreError::BadName(_))));
    }
}
