//! Content hashes, the fitted-model cache and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use dockflow::corpus::{CALENDAR_FILE, RIDES_FILE, SNAPSHOT_FILE, STATIONS_FILE};
use dockflow::sim::{FitParams, ModelFile, SimModels};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MODELS_FILE: &str = "models.json";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 over the corpus files in a fixed order, each prefixed by its
/// name. A missing calendar hashes as empty.
pub fn corpus_hash(dir: &Path) -> std::io::Result<String> {
    let mut h = Sha256::new();
    for name in [STATIONS_FILE, RIDES_FILE, SNAPSHOT_FILE, CALENDAR_FILE] {
        let path = dir.join(name);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if name == CALENDAR_FILE && e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))),
        };
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Cache key: corpus hash, fit parameters and code version.
pub fn models_key(corpus_hash: &str, fit: &FitParams) -> String {
    let mut h = Sha256::new();
    h.update(b"dockflow-models\0");
    h.update(VERSION.as_bytes());
    h.update(corpus_hash.as_bytes());
    h.update(serde_json::to_vec(fit).expect("fit params serialize"));
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CachedModels {
    pub key: String,
    pub corpus_hash: String,
    pub fit: FitParams,
    pub models: ModelFile,
}

pub fn models_path(cache: &Path) -> PathBuf {
    cache.join(MODELS_FILE)
}

/// Cached models if present and fitted for `key`.
pub fn load_models(cache: &Path, key: &str) -> anyhow::Result<Option<SimModels>> {
    let path = models_path(cache);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read(&path)?;
    // a stale or unreadable cache is refitted rather than trusted
    match serde_json::from_slice::<CachedModels>(&text) {
        Ok(c) if c.key == key => Ok(Some(c.models.into())),
        Ok(_) => Ok(None),
        Err(e) => {
            log::warn!("ignoring unreadable cache {}: {e}", path.display());
            Ok(None)
        }
    }
}

/// Key of the cache file, without loading the models.
pub fn cached_key(cache: &Path) -> Option<String> {
    #[derive(Deserialize)]
    struct KeyOnly {
        key: String,
    }
    let text = fs::read(models_path(cache)).ok()?;
    serde_json::from_slice::<KeyOnly>(&text).ok().map(|k| k.key)
}

pub fn store_models(cache: &Path, key: &str, corpus_hash: &str, fit: &FitParams, models: &SimModels) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(cache)?;
    let path = models_path(cache);
    let record = CachedModels {
        key: key.to_string(),
        corpus_hash: corpus_hash.to_string(),
        fit: *fit,
        models: models.into(),
    };
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec(&record)?)?;
    fs::rename(&tmp, &path)?;
    Ok(path)
}

/// Everything needed to reproduce a command's outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub args: Vec<String>,
    pub corpus: Option<PathBuf>,
    pub corpus_hash: Option<String>,
    pub models_key: Option<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub outputs: Vec<PathBuf>,
}

/// Manifest path next to an output file: `report.csv` → `report.csv.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn write_manifest(output: &Path, manifest: &RunManifest) -> anyhow::Result<PathBuf> {
    let path = manifest_path(output);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}
