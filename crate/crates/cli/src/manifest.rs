//! Run identity and provenance stamping.
//!
//! The manifest hash covers everything that determines output content: the
//! semantic configuration, the content of every input file, the prompt
//! template, the software version and the mock seed. Timestamps live only
//! in `manifest.json`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use teai_core::llm_gateway::{sha256_bytes_hex, sha256_hex, write_atomic, PromptTemplate};

use crate::config::RunConfig;

pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
const STAMP_PREFIX: &str = "# manifest_hash=";

fn file_digest(path: &Path) -> Result<Option<String>> {
    if !path.is_file() {
        return Ok(None);
    }
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(Some(sha256_bytes_hex(&bytes)))
}

/// Hash of the semantic configuration and the input files (by role and
/// content, so moving the inputs does not change it).
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let mut inputs = BTreeMap::new();
    for (label, p) in cfg.input_files() {
        inputs.insert(label, file_digest(&p)?);
    }
    let doc = serde_json::json!({ "config": cfg.semantic_json(), "inputs": inputs });
    Ok(sha256_hex(&[&doc.to_string()]))
}

pub fn manifest_hash(config_hash: &str, template: &PromptTemplate, mock_seed: Option<u64>) -> String {
    let template_json = serde_json::to_string(template).expect("template serializes");
    let mode = match mock_seed {
        Some(s) => format!("mock:{s}"),
        None => "live".to_string(),
    };
    sha256_hex(&[config_hash, &template_json, SOFTWARE_VERSION, &mode])
}

pub fn stamp_line(hash: &str) -> String {
    format!("{STAMP_PREFIX}{hash}\n")
}

/// The manifest hash recorded on the first line of a stamped file.
pub fn read_stamp(path: &Path) -> Option<String> {
    let text = std::fs::read_to_string(path).ok()?;
    text.lines().next()?.strip_prefix(STAMP_PREFIX).map(str::to_string)
}

/// Writes `body` behind a stamp line, atomically.
pub fn write_stamped(path: &Path, hash: &str, body: &[u8]) -> Result<()> {
    let mut bytes = stamp_line(hash).into_bytes();
    bytes.extend_from_slice(body);
    write_atomic(path, &bytes).with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tasks_parsed: Option<usize>,
    pub occupations_parsed: Option<usize>,
    pub tasks_imputed: Option<usize>,
    pub tasks_scored: Option<usize>,
    pub tasks_excluded: Option<usize>,
    pub tasks_partial_ensemble: Option<usize>,
    pub occupations_scored: Option<usize>,
    pub occupations_missing: Option<usize>,
    pub analyses_failed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub started: String,
    pub finished: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_hash: String,
    pub config_hash: String,
    pub template_version: String,
    pub model_ids: Vec<String>,
    pub embedding_model_id: Option<String>,
    pub software_version: String,
    pub mock_seed: Option<u64>,
    pub counts: Counts,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    /// Loads the manifest in `dir` if it belongs to the same run, otherwise
    /// starts a fresh one.
    pub fn load_or_new(dir: &Path, fresh: RunManifest) -> RunManifest {
        let path = dir.join(MANIFEST_FILE);
        match std::fs::read(&path)
            .ok()
            .and_then(|b| serde_json::from_slice::<RunManifest>(&b).ok())
        {
            Some(m) if m.manifest_hash == fresh.manifest_hash => m,
            Some(_) => {
                tracing::info!("configuration changed since the last run; starting a new manifest");
                fresh
            }
            None => fresh,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        write_atomic(&dir.join(MANIFEST_FILE), &bytes)
            .with_context(|| format!("cannot write manifest in {}", dir.display()))
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
