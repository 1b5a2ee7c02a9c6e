//! Run manifests: enough to re-run a command exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    /// SHA-256 of the argument list and config contents.
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn files_under(dir: &Path, base: &Path, out: &mut Vec<(String, std::path::PathBuf)>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            files_under(&p, base, out)?;
        } else {
            let rel = p.strip_prefix(base).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            out.push((rel, p));
        }
    }
    Ok(())
}

/// Hash of a file, or of every file under a directory (paths and contents,
/// in sorted order).
pub fn hash_path(path: &Path) -> Result<String, CliError> {
    if path.is_file() {
        return Ok(sha256(&fs::read(path)?));
    }
    let mut files = Vec::new();
    files_under(path, path, &mut files)?;
    let mut h = Sha256::new();
    for (rel, p) in files {
        if rel == MANIFEST_FILE {
            continue;
        }
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(fs::read(p)?);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn versions() -> BTreeMap<String, String> {
    [
        ("qotsim", env!("CARGO_PKG_VERSION").to_string()),
        ("world_format", qotsim::world::WORLD_FORMAT_VERSION.to_string()),
        ("param_format", qotsim::engine::PARAM_VERSION.to_string()),
        ("model_bundle", qotsim::genqot::MODEL_BUNDLE_VERSION.to_string()),
        ("policy_bundle", qotsim::policy::POLICY_BUNDLE_VERSION.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub struct ManifestBuilder {
    m: RunManifest,
    config: Vec<u8>,
}

impl ManifestBuilder {
    pub fn new(command: &str, argv: &[String], seed: u64) -> Self {
        Self {
            m: RunManifest {
                command: command.into(),
                args: argv.to_vec(),
                seed,
                config_hash: String::new(),
                versions: versions(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                extra: BTreeMap::new(),
            },
            config: argv.join("\0").into_bytes(),
        }
    }

    pub fn config_bytes(mut self, bytes: &[u8]) -> Self {
        self.config.push(0);
        self.config.extend_from_slice(bytes);
        self
    }

    pub fn input(mut self, label: &str, path: &Path) -> Result<Self, CliError> {
        self.m.inputs.insert(label.into(), hash_path(path)?);
        Ok(self)
    }

    pub fn extra(mut self, key: &str, value: impl Serialize) -> Self {
        self.m.extra.insert(key.into(), serde_json::to_value(value).unwrap_or_default());
        self
    }

    /// Hashes everything under `out` and writes the manifest there.
    pub fn write(mut self, out: &Path) -> Result<RunManifest, CliError> {
        self.m.config_hash = sha256(&self.config);
        let mut files = Vec::new();
        files_under(out, out, &mut files)?;
        for (rel, p) in files {
            if rel != MANIFEST_FILE {
                self.m.outputs.insert(rel, sha256(&fs::read(p)?));
            }
        }
        let mut text = serde_json::to_string_pretty(&self.m)?;
        text.push('\n');
        fs::write(out.join(MANIFEST_FILE), text)?;
        Ok(self.m)
    }
}

pub fn read(dir: &Path) -> Option<RunManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}
