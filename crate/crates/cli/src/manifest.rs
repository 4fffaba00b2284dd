use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fail::{CliError, CliResult};

/// Written by every command into its output directory.
pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub versions: BTreeMap<String, String>,
    pub config_sha256: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub warnings: Vec<String>,
    pub details: serde_json::Value,
    /// Wall-clock milliseconds per stage; not covered by `manifest_sha256`.
    pub timings_ms: BTreeMap<String, f64>,
    pub manifest_sha256: String,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Regular files under `dir`, sorted, as paths relative to `dir`. Manifests
/// written by this tool are skipped since they embed timings.
pub fn list_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
        let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        for e in entries {
            let e = e.map_err(|err| CliError::io(dir, err))?;
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else if !is_manifest(&p) {
                out.push(p.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

fn is_manifest(p: &Path) -> bool {
    p.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with("run_manifest") && n.ends_with(".json"))
}

fn rel_name(label: &str, rel: &Path) -> String {
    let s = rel.to_string_lossy().replace('\\', "/");
    format!("{label}/{s}")
}

pub struct ManifestBuilder {
    m: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, config_toml: &str) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("entroprog".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("feature_recipe".into(), entroprog::stpe::RECIPE_VERSION.into());
        versions.insert("checkpoint_format".into(), entroprog::nn::CHECKPOINT_VERSION.to_string());
        Self {
            m: RunManifest {
                command: command.into(),
                versions,
                config_sha256: sha256_bytes(config_toml.as_bytes()),
                inputs: Vec::new(),
                outputs: Vec::new(),
                warnings: Vec::new(),
                details: serde_json::Value::Null,
                timings_ms: BTreeMap::new(),
                manifest_sha256: String::new(),
            },
        }
    }

    /// Hashes every file of an input directory under the name `label`.
    pub fn input_dir(&mut self, label: &str, dir: &Path) -> CliResult<()> {
        for rel in list_files(dir)? {
            let sha256 = sha256_file(&dir.join(&rel))?;
            self.m.inputs.push(FileHash {
                path: rel_name(label, &rel),
                sha256,
            });
        }
        Ok(())
    }

    pub fn input_file(&mut self, label: &str, path: &Path) -> CliResult<()> {
        let name = path.file_name().map(PathBuf::from).unwrap_or_default();
        self.m.inputs.push(FileHash {
            path: rel_name(label, &name),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn warn(&mut self, w: impl Into<String>) {
        self.m.warnings.push(w.into());
    }

    pub fn details(&mut self, v: serde_json::Value) {
        self.m.details = v;
    }

    pub fn timing(&mut self, stage: &str, ms: f64) {
        self.m.timings_ms.insert(stage.into(), ms);
    }

    /// Hashes the listed outputs (relative to `dir`), seals the manifest and
    /// writes it as `file_name` inside `dir`.
    pub fn finish(mut self, dir: &Path, outputs: &[PathBuf], file_name: &str) -> CliResult<RunManifest> {
        let mut outputs = outputs.to_vec();
        outputs.sort();
        for rel in outputs {
            let sha256 = sha256_file(&dir.join(&rel))?;
            self.m.outputs.push(FileHash {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256,
            });
        }
        self.m.manifest_sha256 = content_hash(&self.m);
        let text = serde_json::to_string_pretty(&self.m).expect("manifest serializes");
        let path = dir.join(file_name);
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(self.m)
    }
}

/// Hash of a manifest with timings and the hash field blanked.
pub fn content_hash(m: &RunManifest) -> String {
    let mut c = m.clone();
    c.timings_ms.clear();
    c.manifest_sha256.clear();
    sha256_bytes(&serde_json::to_vec(&c).expect("manifest serializes"))
}
