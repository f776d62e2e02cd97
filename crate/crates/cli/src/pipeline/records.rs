use std::io::BufRead;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use teai_core::llm_gateway::{MissingVerdict, ModelVerdict};
use teai_core::onet_ingest::SocCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssessmentStatus {
    Scored,
    Excluded,
}

/// One line of `assessments.jsonl`: the audit trail of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub manifest_hash: String,
    pub task_id: u64,
    pub socs: Vec<SocCode>,
    pub status: AssessmentStatus,
    pub te: Option<i64>,
    pub consensus: Option<f64>,
    pub similarity: Option<f64>,
    pub embedding_model_id: Option<String>,
    /// Scored from fewer verdicts than configured models.
    pub partial_ensemble: bool,
    /// One slot per configured model, in configuration order.
    pub verdicts: Vec<Option<ModelVerdict>>,
    pub missing: Vec<MissingVerdict>,
    pub reason: Option<String>,
}

pub fn read_assessments(path: &Path) -> Result<Vec<AssessmentRecord>> {
    let f = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}
