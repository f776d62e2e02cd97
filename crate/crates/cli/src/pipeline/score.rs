use std::collections::BTreeMap;
use std::fs::File;
use std::sync::Arc;
use std::time::Duration;

use anyhow::anyhow;
use teai_core::consensus::{fuse, ConsensusOptions, EmbeddingClient, EmbeddingVector, HashingEmbedder};
use teai_core::llm_gateway::mock::MockTransport;
use teai_core::llm_gateway::{
    write_atomic, ChatTransport, EmbeddingTransport, Gateway, GatewayError, GatewayOptions, HttpEmbeddingTransport,
    HttpTransport, JsonCache, RetryPolicy, TaskVerdicts,
};
use teai_core::onet_ingest::{read_tasks_csv, SocCode};

use super::records::{AssessmentRecord, AssessmentStatus};
use super::{capped, parallel_map, Failure, OrRuntime, Pipeline, StageResult, Status, ASSESSMENTS, TASKS_CSV};

pub const MOCK_EMBEDDING_MODEL: &str = "hashing-256";
const MOCK_EMBEDDING_DIM: usize = 256;

/// Traffic counters of one scoring run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreStats {
    pub tasks: usize,
    pub chat_calls: usize,
    pub embedding_calls: usize,
}

pub struct Transports {
    pub chat: Arc<dyn ChatTransport>,
    pub embedding: Option<(Arc<dyn EmbeddingTransport>, String)>,
}

impl Pipeline {
    fn retry_policy(&self) -> RetryPolicy {
        let s = &self.cfg.scoring;
        RetryPolicy {
            max_retries: s.max_retries,
            base_delay: Duration::from_millis(s.base_delay_ms),
            max_delay: Duration::from_millis(s.max_delay_ms),
        }
    }

    fn cache_root(&self) -> std::path::PathBuf {
        match self.opts.mock_seed() {
            Some(seed) => self.cfg.paths.cache_dir.join(format!("mock-{seed}")),
            None => self.cfg.paths.cache_dir.join("live"),
        }
    }

    /// The transports the configuration asks for: the seeded mock under
    /// `--mock`, the HTTP endpoints otherwise. Credentials are checked here,
    /// before any request is made.
    pub fn transports(&self) -> Result<Transports, Failure> {
        if let Some(seed) = self.opts.mock_seed() {
            return Ok(Transports {
                chat: Arc::new(MockTransport::new(seed, self.template.clone())),
                embedding: Some((
                    Arc::new(HashingEmbedder::new(MOCK_EMBEDDING_DIM)),
                    MOCK_EMBEDDING_MODEL.to_string(),
                )),
            });
        }
        for m in &self.cfg.models {
            m.check_credentials().map_err(Failure::validation)?;
        }
        let timeout = Duration::from_secs(self.cfg.scoring.timeout_secs);
        let chat = HttpTransport::new(timeout).map_err(Failure::validation)?;
        let embedding = match &self.cfg.embedding {
            Some(e) => {
                if let Some(var) = &e.api_key_env {
                    if std::env::var(var).map(|v| v.is_empty()).unwrap_or(true) {
                        return Err(Failure::validation(anyhow!(
                            "embedding: environment variable {var} is not set"
                        )));
                    }
                }
                let t = HttpEmbeddingTransport::new(e.endpoint_url.clone(), e.api_key_env.clone(), timeout)
                    .map_err(Failure::validation)?;
                Some((Arc::new(t) as Arc<dyn EmbeddingTransport>, e.model_id.clone()))
            }
            None => None,
        };
        Ok(Transports {
            chat: Arc::new(chat),
            embedding,
        })
    }

    pub fn score(&self) -> StageResult {
        let t = self.transports()?;
        self.score_with(t).map(|(s, _)| s)
    }

    /// Scores every task in `tasks.csv`. Replies and embeddings are cached as
    /// they arrive, so an interrupted run resumes where it stopped.
    pub fn score_with(&self, transports: Transports) -> Result<(Status, ScoreStats), Failure> {
        let mut stats = ScoreStats::default();
        let status = self.stage("score", |counts| {
            let path = self.require_output(TASKS_CSV, "ingest")?;
            let tasks = read_tasks_csv(File::open(&path).runtime()?).map_err(Failure::validation)?;
            let mut by_id: BTreeMap<u64, (String, Vec<SocCode>)> = BTreeMap::new();
            for t in tasks {
                let e = by_id
                    .entry(t.task_id)
                    .or_insert_with(|| (t.description.clone(), Vec::new()));
                e.1.push(t.soc);
            }
            let work: Vec<(u64, String)> = by_id.iter().map(|(id, (d, _))| (*id, d.clone())).collect();
            stats.tasks = work.len();

            let root = self.cache_root();
            let gateway = Gateway::new(
                transports.chat,
                Some(JsonCache::new(root.join("chat"))),
                GatewayOptions {
                    retry: self.retry_policy(),
                    requery_budget: self.cfg.scoring.requery_budget,
                    max_in_flight: self.cfg.scoring.max_in_flight,
                },
            );
            let result = gateway.assess_all(&self.template, &work, &self.cfg.models, self.cfg.scoring.workers);
            stats.chat_calls = gateway.network_calls();
            let verdicts = match result {
                Ok(v) => v,
                Err(e @ GatewayError::Auth { .. }) => {
                    return Err(Failure::runtime(anyhow!(e).context(
                        "scoring stopped; replies received so far are cached and a rerun resumes from them",
                    )))
                }
                Err(e) => return Err(Failure::runtime(e)),
            };

            let embedder = transports.embedding.map(|(t, model)| {
                EmbeddingClient::new(
                    t,
                    model,
                    Some(JsonCache::new(root.join("embeddings"))),
                    self.retry_policy(),
                )
            });
            let opts = ConsensusOptions {
                width_override: self.cfg.consensus.width,
                similarity: self.cfg.consensus.similarity,
                ..Default::default()
            };
            let n_models = self.cfg.models.len();
            let items: Vec<(&(u64, String), TaskVerdicts)> = work.iter().zip(verdicts).collect();
            let records: Vec<Result<AssessmentRecord, Failure>> =
                parallel_map(&items, self.cfg.scoring.workers, |((id, _), tv)| {
                    self.assessment(*id, by_id[id].1.clone(), tv.clone(), n_models, embedder.as_ref(), &opts)
                });
            stats.embedding_calls = embedder.as_ref().map_or(0, |e| e.network_calls());

            let mut body = String::new();
            let mut excluded = Vec::new();
            let mut partial = 0;
            let mut no_similarity = 0;
            for r in records {
                let r = r?;
                match r.status {
                    AssessmentStatus::Excluded => {
                        excluded.push(format!("task {}: {}", r.task_id, r.reason.as_deref().unwrap_or("")))
                    }
                    AssessmentStatus::Scored => {
                        partial += usize::from(r.partial_ensemble);
                        no_similarity += usize::from(r.similarity.is_none());
                    }
                }
                body.push_str(&serde_json::to_string(&r).runtime()?);
                body.push('\n');
            }
            write_atomic(&self.out(ASSESSMENTS), body.as_bytes()).runtime()?;

            let scored = work.len() - excluded.len();
            let mut notes = vec![
                format!("tasks assessed: {}", work.len()),
                format!("scored: {scored}"),
                format!("scored from a partial ensemble: {partial}"),
                format!("scored without similarity: {no_similarity}"),
                format!("excluded (fewer than 2 usable verdicts): {}", excluded.len()),
            ];
            notes.extend(capped(&excluded, 50, "  "));
            self.write_notes("score", &notes)?;
            counts.tasks_scored = Some(scored);
            counts.tasks_excluded = Some(excluded.len());
            counts.tasks_partial_ensemble = Some(partial);
            Ok(if excluded.is_empty() {
                Status::Complete
            } else {
                Status::Partial
            })
        })?;
        Ok((status, stats))
    }

    fn assessment(
        &self,
        task_id: u64,
        socs: Vec<SocCode>,
        tv: TaskVerdicts,
        n_models: usize,
        embedder: Option<&EmbeddingClient>,
        opts: &ConsensusOptions,
    ) -> Result<AssessmentRecord, Failure> {
        let mut rec = AssessmentRecord {
            manifest_hash: self.manifest_hash.clone(),
            task_id,
            socs,
            status: AssessmentStatus::Excluded,
            te: None,
            consensus: None,
            similarity: None,
            embedding_model_id: None,
            partial_ensemble: tv.usable() < n_models,
            verdicts: Vec::new(),
            missing: tv.missing.clone(),
            reason: None,
        };
        if tv.needs_review() {
            rec.reason = Some(format!("{} usable verdict(s); needs review", tv.usable()));
            rec.verdicts = tv.slots;
            return Ok(rec);
        }
        let embeddings: Option<Vec<EmbeddingVector>> = match embedder {
            Some(client) => {
                let mut out = Vec::new();
                for v in tv.slots.iter().flatten() {
                    match client.embed(&v.motivation) {
                        Ok(e) => out.push(e),
                        Err(teai_core::consensus::EmbedError::Cache(e)) => return Err(Failure::runtime(e)),
                        Err(e) => {
                            tracing::warn!("task {task_id}: embedding failed: {e}");
                            break;
                        }
                    }
                }
                (out.len() == tv.usable()).then_some(out)
            }
            None => None,
        };
        let model = embedder.map(|e| e.model_id().to_string()).unwrap_or_default();
        let fused = fuse(
            tv.slots.clone(),
            embeddings.as_deref().map(|e| (e, model.as_str())),
            opts,
        );
        match fused {
            Ok(a) => {
                rec.status = AssessmentStatus::Scored;
                rec.te = Some(a.te);
                rec.consensus = Some(a.consensus);
                rec.similarity = a.similarity.as_ref().map(|s| s.similarity);
                rec.embedding_model_id = a.similarity.map(|s| s.embedding_model_id);
                rec.verdicts = a.verdicts;
            }
            Err(e) => {
                rec.reason = Some(e.to_string());
                rec.verdicts = tv.slots;
            }
        }
        Ok(rec)
    }
}
