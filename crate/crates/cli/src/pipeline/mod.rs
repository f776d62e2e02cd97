//! The four stages. Each reads its inputs from the output directory of the
//! previous ones, so stages can be rerun independently.

mod analyze;
mod index;
mod ingest;
mod records;
mod score;

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use teai_core::llm_gateway::PromptTemplate;

use crate::config::RunConfig;
use crate::manifest::{self, now_rfc3339, Counts, RunManifest, StageRecord};

pub use records::{read_assessments, AssessmentRecord, AssessmentStatus};
pub use score::{ScoreStats, Transports, MOCK_EMBEDDING_MODEL};

pub const TASKS_CSV: &str = "tasks.csv";
pub const OCCUPATIONS_CSV: &str = "occupations.csv";
pub const SKILLS_CSV: &str = "skills.csv";
pub const EMPLOYMENT_CSV: &str = "employment.csv";
pub const ASSESSMENTS: &str = "assessments.jsonl";
pub const SCORES_CSV: &str = "occupation_scores.csv";
pub const SKILL_RELEVANCE_CSV: &str = "skill_relevance.csv";
pub const TERTILES_CSV: &str = "tertiles.csv";
pub const CORRELATIONS_CSV: &str = "correlations.csv";
pub const REGRESSIONS_CSV: &str = "regressions.csv";
pub const REPORT: &str = "report.txt";
pub const NOTES_DIR: &str = "notes";

pub const DEFAULT_MOCK_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Complete,
    /// Finished, but some tasks or analyses were left out.
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Validation,
    Runtime,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: FailureKind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn validation(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: FailureKind::Validation,
            error: error.into(),
        }
    }

    pub fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: FailureKind::Runtime,
            error: error.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Validation => 1,
            FailureKind::Runtime => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub fn exit_code(result: &Result<Status, Failure>) -> i32 {
    match result {
        Ok(Status::Complete) => 0,
        Ok(Status::Partial) => 3,
        Err(f) => f.exit_code(),
    }
}

pub type StageResult = Result<Status, Failure>;

trait OrRuntime<T> {
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrRuntime<T> for Result<T, E> {
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(Failure::runtime)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Options {
    pub mock: bool,
    pub seed: Option<u64>,
    pub allow_partial_ensemble: bool,
}

impl Options {
    pub fn mock_seed(&self) -> Option<u64> {
        self.mock.then(|| self.seed.unwrap_or(DEFAULT_MOCK_SEED))
    }
}

pub struct Pipeline {
    cfg: RunConfig,
    opts: Options,
    template: PromptTemplate,
    config_hash: String,
    manifest_hash: String,
}

impl Pipeline {
    /// Validates the configuration; every failure here is a validation error.
    pub fn new(cfg: RunConfig, opts: Options) -> Result<Self, Failure> {
        cfg.validate(opts.allow_partial_ensemble).map_err(Failure::validation)?;
        if opts.seed.is_some() && !opts.mock {
            tracing::warn!("--seed only affects --mock runs");
        }
        let template = cfg.template().map_err(Failure::validation)?;
        let config_hash = manifest::config_hash(&cfg).map_err(Failure::validation)?;
        let manifest_hash = manifest::manifest_hash(&config_hash, &template, opts.mock_seed());
        Ok(Self {
            cfg,
            opts,
            template,
            config_hash,
            manifest_hash,
        })
    }

    pub fn load(config_path: &Path, opts: Options) -> Result<Self, Failure> {
        let cfg = RunConfig::load(config_path).map_err(Failure::validation)?;
        Self::new(cfg, opts)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn manifest_hash(&self) -> &str {
        &self.manifest_hash
    }

    pub fn output_dir(&self) -> &Path {
        &self.cfg.paths.output_dir
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.paths.output_dir.join(name)
    }

    fn embedding_model_id(&self) -> Option<String> {
        if self.opts.mock {
            Some(score::MOCK_EMBEDDING_MODEL.to_string())
        } else {
            self.cfg.embedding.as_ref().map(|e| e.model_id.clone())
        }
    }

    fn fresh_manifest(&self) -> RunManifest {
        RunManifest {
            manifest_hash: self.manifest_hash.clone(),
            config_hash: self.config_hash.clone(),
            template_version: self.template.version().to_string(),
            model_ids: self.cfg.models.iter().map(|m| m.model_id.clone()).collect(),
            embedding_model_id: self.embedding_model_id(),
            software_version: manifest::SOFTWARE_VERSION.to_string(),
            mock_seed: self.opts.mock_seed(),
            counts: Counts::default(),
            stages: Default::default(),
        }
    }

    /// Runs a stage and records it in the manifest.
    fn stage(&self, name: &str, body: impl FnOnce(&mut Counts) -> StageResult) -> StageResult {
        std::fs::create_dir_all(self.output_dir())
            .with_context(|| format!("cannot create {}", self.output_dir().display()))
            .runtime()?;
        let started = now_rfc3339();
        let mut manifest = RunManifest::load_or_new(self.output_dir(), self.fresh_manifest());
        let result = body(&mut manifest.counts);
        let status = match &result {
            Ok(Status::Complete) => "complete".to_string(),
            Ok(Status::Partial) => "partial".to_string(),
            Err(f) => format!("failed: {f}"),
        };
        manifest.stages.insert(
            name.to_string(),
            StageRecord {
                started,
                finished: now_rfc3339(),
                status,
            },
        );
        manifest.save(self.output_dir()).runtime()?;
        result
    }

    /// Reads an output of an earlier stage, warning when it was produced
    /// under a different manifest.
    fn require_output(&self, name: &str, producer: &str) -> Result<PathBuf, Failure> {
        let path = self.out(name);
        if !path.is_file() {
            return Err(Failure::validation(anyhow!(
                "{} not found; run `teai {producer}` first",
                path.display()
            )));
        }
        self.check_stamp(&path);
        Ok(path)
    }

    fn check_stamp(&self, path: &Path) {
        match manifest::read_stamp(path) {
            Some(h) if h == self.manifest_hash => {}
            Some(_) => tracing::warn!(
                "{} was produced under a different configuration; rerun the earlier stages",
                path.display()
            ),
            None => tracing::warn!("{} carries no manifest stamp", path.display()),
        }
    }

    fn write(&self, name: &str, body: &[u8]) -> Result<(), Failure> {
        manifest::write_stamped(&self.out(name), &self.manifest_hash, body).runtime()
    }

    fn write_notes(&self, stage: &str, lines: &[String]) -> Result<(), Failure> {
        let mut body = String::new();
        for l in lines {
            body.push_str(l);
            body.push('\n');
        }
        self.write(&format!("{NOTES_DIR}/{stage}.txt"), body.as_bytes())
    }

    fn read_notes(&self, stage: &str) -> Option<String> {
        let text = std::fs::read_to_string(self.out(&format!("{NOTES_DIR}/{stage}.txt"))).ok()?;
        Some(text.lines().skip(1).map(|l| format!("{l}\n")).collect())
    }
}

/// First `limit` items of a list of notes, then a count of the rest.
fn capped<T: fmt::Display>(items: &[T], limit: usize, indent: &str) -> Vec<String> {
    let mut out: Vec<String> = items.iter().take(limit).map(|i| format!("{indent}{i}")).collect();
    if items.len() > limit {
        out.push(format!("{indent}... and {} more", items.len() - limit));
    }
    out
}

/// Maps `f` over `items` on `workers` threads, keeping input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<R>>> = items.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| {
            s.into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every slot filled")
        })
        .collect()
}
