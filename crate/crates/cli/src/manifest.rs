//! Run manifest: what went in, what came out, how long each stage took.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// `ran`, `resumed` or `failed`.
    pub status: String,
    pub wall_ms: u128,
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub versions: Vec<(String, String)>,
    pub config: String,
    pub seed: u64,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    pub stages: Vec<StageRecord>,
    pub status: String,
    pub error: Option<String>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn digest(path: &Path, root: Option<&Path>) -> FileDigest {
    let shown = root.and_then(|r| path.strip_prefix(r).ok()).unwrap_or(path);
    FileDigest {
        path: shown.display().to_string(),
        sha256: sha256_file(path).unwrap_or_else(|e| format!("unreadable: {e}")),
    }
}

impl RunManifest {
    pub fn new(command: &str, config: String, seed: u64, threads: usize) -> Self {
        Self {
            command: command.into(),
            versions: vec![
                ("storage-arb-cli".into(), env!("CARGO_PKG_VERSION").into()),
                ("storage-arb-core".into(), storage_arb::VERSION.into()),
            ],
            config,
            seed,
            threads,
            inputs: Vec::new(),
            stages: Vec::new(),
            status: "running".into(),
            error: None,
        }
    }

    pub fn record_inputs(&mut self, files: &[PathBuf]) {
        self.inputs.extend(files.iter().map(|p| digest(p, None)));
    }

    pub fn record_stage(
        &mut self,
        name: &str,
        status: &str,
        started: Instant,
        outputs: &[PathBuf],
        root: &Path,
    ) {
        self.stages.push(StageRecord {
            name: name.into(),
            status: status.into(),
            wall_ms: started.elapsed().as_millis(),
            outputs: outputs
                .iter()
                .filter(|p| p.exists())
                .map(|p| digest(p, Some(root)))
                .collect(),
        });
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        fs::write(dir.join(FILE), json + "\n")
    }
}

impl RunManifest {
    pub fn read(dir: &Path) -> Option<Self> {
        serde_json::from_str(&fs::read_to_string(dir.join(FILE)).ok()?).ok()
    }

    /// Whether a stage finished earlier with outputs still identical on disk.
    pub fn stage_intact(&self, name: &str, outputs: &[PathBuf], root: &Path) -> bool {
        let Some(rec) = self.stages.iter().rev().find(|s| s.name == name) else {
            return false;
        };
        if rec.status == "failed" || outputs.is_empty() || rec.outputs.len() != outputs.len() {
            return false;
        }
        outputs.iter().all(|p| {
            let d = digest(p, Some(root));
            p.exists()
                && rec
                    .outputs
                    .iter()
                    .any(|o| o.path == d.path && o.sha256 == d.sha256)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intact_stage_requires_matching_digests() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.csv");
        fs::write(&f, "x\n1\n").unwrap();
        let mut m = RunManifest::new("pipeline", "k = v\n".into(), 1, 0);
        m.record_stage(
            "stats",
            "ran",
            Instant::now(),
            std::slice::from_ref(&f),
            dir.path(),
        );
        m.write(dir.path()).unwrap();
        let back = RunManifest::read(dir.path()).unwrap();
        assert!(back.stage_intact("stats", std::slice::from_ref(&f), dir.path()));
        assert!(!back.stage_intact("sweep", std::slice::from_ref(&f), dir.path()));
        fs::write(&f, "x\n2\n").unwrap();
        assert!(!back.stage_intact("stats", &[f], dir.path()));
    }
}
