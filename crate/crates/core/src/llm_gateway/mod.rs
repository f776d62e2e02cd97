//! Querying the judge models: prompt rendering, transport with retries and
//! caching, and reply parsing into verdicts.

pub mod cache;
pub mod mock;
mod parse;
mod prompt;
pub mod transport;

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{sha256_bytes_hex, sha256_hex, write_atomic, JsonCache};
pub use parse::{format_reply, parse_response, ParseError};
pub use prompt::{PromptTemplate, Shot, TemplateError, SHOT_COUNT};
pub use transport::{
    ChatTransport, EmbeddingTransport, FailureKind, HttpEmbeddingTransport, HttpTransport, TransportError,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decoding {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_seed")]
    pub seed: Option<u64>,
}

fn default_max_tokens() -> u32 {
    512
}

fn default_seed() -> Option<u64> {
    Some(42)
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            seed: default_seed(),
        }
    }
}

/// A judge model behind an OpenAI-compatible endpoint. Only the *name* of
/// the environment variable holding the key is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model_id: String,
    pub endpoint_url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub decoding: Decoding,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_id.trim().is_empty() {
            return Err(GatewayError::Config("model_id is empty".into()));
        }
        if self.decoding.temperature < 0.0 || !self.decoding.temperature.is_finite() {
            return Err(GatewayError::Config(format!(
                "{}: temperature must be >= 0",
                self.model_id
            )));
        }
        if self.decoding.max_tokens == 0 {
            return Err(GatewayError::Config(format!(
                "{}: max_tokens must be positive",
                self.model_id
            )));
        }
        let url = self.endpoint_url.trim();
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(GatewayError::Config(format!(
                "{}: endpoint_url {url:?} is not an http(s) URL",
                self.model_id
            )));
        }
        Ok(())
    }

    /// Checks that the configured key variable is present in the environment.
    pub fn check_credentials(&self) -> Result<(), GatewayError> {
        match &self.api_key_env {
            Some(var) if std::env::var(var).map(|v| v.is_empty()).unwrap_or(true) => Err(GatewayError::Auth {
                model_id: self.model_id.clone(),
                message: format!("environment variable {var} is not set"),
            }),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVerdict {
    pub model_id: String,
    pub rating: i64,
    pub motivation: String,
    pub raw_reply: String,
    pub attempt_count: u32,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{model_id}: transport failed for {context}: {source}")]
    Transport {
        model_id: String,
        context: String,
        #[source]
        source: TransportError,
    },
    #[error("{model_id}: authentication failed: {message}")]
    Auth { model_id: String, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `retry` (1-based): base · 2^(retry−1), capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Runs `op` until it succeeds, fails non-transiently or the retry budget is
/// spent. Returns the outcome and the number of attempts made.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut() -> Result<T, TransportError>,
) -> (Result<T, TransportError>, u32) {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match op() {
            Ok(v) => return (Ok(v), attempts),
            Err(e) if e.kind == FailureKind::Transient && attempts <= policy.max_retries => {
                let delay = policy.delay(attempts);
                tracing::debug!("transient failure ({e}); retry {attempts} in {delay:?}");
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
            Err(e) => return (Err(e), attempts),
        }
    }
}

/// Counting semaphore bounding in-flight requests per endpoint.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut p = self.permits.lock().unwrap_or_else(|e| e.into_inner());
            while *p == 0 {
                p = self.cv.wait(p).unwrap_or_else(|e| e.into_inner());
            }
            *p -= 1;
        }
        let out = f();
        *self.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.cv.notify_one();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CachedReply {
    model_id: String,
    template_version: String,
    prompt_sha256: String,
    requery: u32,
    attempts: u32,
    raw_reply: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub text: String,
    pub attempts: u32,
    pub from_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingVerdict {
    pub model_id: String,
    pub reason: String,
}

/// All verdict slots for one task, in configuration order.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVerdicts {
    pub slots: Vec<Option<ModelVerdict>>,
    pub missing: Vec<MissingVerdict>,
}

impl TaskVerdicts {
    pub fn usable(&self) -> usize {
        self.slots.iter().flatten().count()
    }

    /// Fewer than two usable verdicts: excluded from scoring.
    pub fn needs_review(&self) -> bool {
        self.usable() < 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatewayOptions {
    pub retry: RetryPolicy,
    /// Extra queries after an unparseable or out-of-range reply.
    pub requery_budget: u32,
    pub max_in_flight: usize,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        Self {
            retry: RetryPolicy::default(),
            requery_budget: 2,
            max_in_flight: 4,
        }
    }
}

/// Shared entry point to the judge models. Safe to use from many threads.
pub struct Gateway {
    transport: Arc<dyn ChatTransport>,
    cache: Option<JsonCache>,
    opts: GatewayOptions,
    limits: Mutex<HashMap<String, Arc<Semaphore>>>,
    network_calls: AtomicUsize,
}

impl Gateway {
    pub fn new(transport: Arc<dyn ChatTransport>, cache: Option<JsonCache>, opts: GatewayOptions) -> Self {
        Self {
            transport,
            cache,
            opts,
            limits: Mutex::new(HashMap::new()),
            network_calls: AtomicUsize::new(0),
        }
    }

    /// Transport calls made so far (cache hits excluded).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    fn limiter(&self, endpoint: &str) -> Arc<Semaphore> {
        let mut map = self.limits.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(endpoint.to_string())
            .or_insert_with(|| Arc::new(Semaphore::new(self.opts.max_in_flight)))
            .clone()
    }

    pub fn cache_key(model_id: &str, template_version: &str, prompt: &str, requery: u32) -> String {
        let prompt_hash = sha256_hex(&[prompt]);
        sha256_hex(&[model_id, template_version, &prompt_hash, &requery.to_string()])
    }

    /// Sends `prompt` to the model, consulting the cache first. `requery`
    /// distinguishes repeated asks of the same prompt after bad replies.
    pub fn query_model(
        &self,
        spec: &ModelSpec,
        template_version: &str,
        prompt: &str,
        requery: u32,
        context: &str,
    ) -> Result<QueryOutcome, GatewayError> {
        let key = Self::cache_key(&spec.model_id, template_version, prompt, requery);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get::<CachedReply>(&key)) {
            if hit.model_id == spec.model_id && hit.template_version == template_version {
                return Ok(QueryOutcome {
                    text: hit.raw_reply,
                    attempts: hit.attempts,
                    from_cache: true,
                });
            }
        }
        let limiter = self.limiter(&spec.endpoint_url);
        let (result, attempts) = with_retries(&self.opts.retry, || {
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            limiter.run(|| self.transport.complete(spec, prompt))
        });
        let text = match result {
            Ok(t) => t,
            Err(e) if e.kind == FailureKind::Auth => {
                return Err(GatewayError::Auth {
                    model_id: spec.model_id.clone(),
                    message: e.message,
                })
            }
            Err(source) => {
                return Err(GatewayError::Transport {
                    model_id: spec.model_id.clone(),
                    context: format!("{context} after {attempts} attempt(s)"),
                    source,
                })
            }
        };
        if let Some(cache) = &self.cache {
            cache.put(
                &key,
                &CachedReply {
                    model_id: spec.model_id.clone(),
                    template_version: template_version.to_string(),
                    prompt_sha256: sha256_hex(&[prompt]),
                    requery,
                    attempts,
                    raw_reply: text.clone(),
                },
            )?;
        }
        Ok(QueryOutcome {
            text,
            attempts,
            from_cache: false,
        })
    }

    fn verdict_for(
        &self,
        spec: &ModelSpec,
        template_version: &str,
        prompt: &str,
        context: &str,
    ) -> Result<Result<ModelVerdict, String>, GatewayError> {
        let mut attempts = 0;
        let mut last_problem = String::new();
        for requery in 0..=self.opts.requery_budget {
            let reply = match self.query_model(spec, template_version, prompt, requery, context) {
                Ok(r) => r,
                Err(e @ GatewayError::Auth { .. }) | Err(e @ GatewayError::Cache(_)) => return Err(e),
                Err(e) => {
                    tracing::warn!("{e}");
                    return Ok(Err(e.to_string()));
                }
            };
            attempts += reply.attempts;
            match parse_response(&reply.text) {
                Ok((rating, motivation)) => {
                    return Ok(Ok(ModelVerdict {
                        model_id: spec.model_id.clone(),
                        rating,
                        motivation,
                        raw_reply: reply.text,
                        attempt_count: attempts,
                    }))
                }
                Err(e) => {
                    tracing::debug!("{}: {context}: {e}", spec.model_id);
                    last_problem = e.to_string();
                }
            }
        }
        Ok(Err(format!(
            "unusable reply after {} queries: {last_problem}",
            self.opts.requery_budget + 1
        )))
    }

    /// Asks every model about one task. Slots follow `specs` order whatever
    /// order the replies arrive in. Only authentication and cache failures
    /// abort; other failures leave the model's slot empty.
    pub fn assess_task(
        &self,
        template: &PromptTemplate,
        task_id: u64,
        task_description: &str,
        specs: &[ModelSpec],
    ) -> Result<TaskVerdicts, GatewayError> {
        let ids: BTreeSet<&str> = specs.iter().map(|s| s.model_id.as_str()).collect();
        if ids.len() != specs.len() {
            return Err(GatewayError::Config("model ids must be distinct".into()));
        }
        let prompt = template.render(task_description);
        let context = format!("task {task_id}");
        let results: Vec<Result<Result<ModelVerdict, String>, GatewayError>> = std::thread::scope(|s| {
            let handles: Vec<_> = specs
                .iter()
                .map(|spec| {
                    let prompt = &prompt;
                    let context = &context;
                    s.spawn(move || self.verdict_for(spec, template.version(), prompt, context))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("verdict worker panicked"))
                .collect()
        });
        let mut out = TaskVerdicts {
            slots: Vec::with_capacity(specs.len()),
            missing: Vec::new(),
        };
        for (spec, r) in specs.iter().zip(results) {
            match r? {
                Ok(v) => out.slots.push(Some(v)),
                Err(reason) => {
                    out.slots.push(None);
                    out.missing.push(MissingVerdict {
                        model_id: spec.model_id.clone(),
                        reason,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Assesses many tasks with `workers` threads; results come back in input
    /// order. Stops early on the first fatal error.
    pub fn assess_all(
        &self,
        template: &PromptTemplate,
        tasks: &[(u64, String)],
        specs: &[ModelSpec],
        workers: usize,
    ) -> Result<Vec<TaskVerdicts>, GatewayError> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<TaskVerdicts, GatewayError>>>> =
            tasks.iter().map(|_| Mutex::new(None)).collect();
        let failed = std::sync::atomic::AtomicBool::new(false);
        std::thread::scope(|s| {
            for _ in 0..workers.max(1) {
                s.spawn(|| loop {
                    if failed.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((id, text)) = tasks.get(i) else {
                        break;
                    };
                    let r = self.assess_task(template, *id, text, specs);
                    if r.is_err() {
                        failed.store(true, Ordering::SeqCst);
                    }
                    *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
                });
            }
        });
        let mut out = Vec::with_capacity(tasks.len());
        for slot in slots {
            if let Some(r) = slot.into_inner().unwrap_or_else(|e| e.into_inner()) {
                out.push(r?);
            }
        }
        if out.len() != tasks.len() {
            return Err(GatewayError::Config("assessment stopped early".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    fn spec(id: &str) -> ModelSpec {
        ModelSpec {
            model_id: id.into(),
            endpoint_url: format!("http://{id}.local/v1"),
            api_key_env: None,
            decoding: Decoding::default(),
        }
    }

    struct Fixed(HashMap<String, String>, AtomicUsize);

    impl ChatTransport for Fixed {
        fn complete(&self, spec: &ModelSpec, _prompt: &str) -> Result<String, TransportError> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0
                .get(&spec.model_id)
                .cloned()
                .ok_or_else(|| TransportError::transient("down"))
        }
    }

    fn fixed(pairs: &[(&str, &str)]) -> Arc<Fixed> {
        Arc::new(Fixed(
            pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            AtomicUsize::new(0),
        ))
    }

    /// Fails `n` times with the given kind, then answers.
    struct Flaky {
        failures: u32,
        kind: FailureKind,
        calls: AtomicU32,
    }

    impl ChatTransport for Flaky {
        fn complete(&self, _: &ModelSpec, _: &str) -> Result<String, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(TransportError {
                    kind: self.kind,
                    message: "HTTP 503".into(),
                })
            } else {
                Ok("[3, \"fine\"]".into())
            }
        }
    }

    fn opts(max_retries: u32) -> GatewayOptions {
        GatewayOptions {
            retry: RetryPolicy::no_delay(max_retries),
            requery_budget: 2,
            max_in_flight: 4,
        }
    }

    #[test]
    fn mock_transport_text_returned() {
        let gw = Gateway::new(fixed(&[("a", "hello")]), None, opts(0));
        let r = gw.query_model(&spec("a"), "v1", "p", 0, "t").unwrap();
        assert_eq!(r.text, "hello");
        assert!(!r.from_cache);
    }

    #[test]
    fn retries_then_succeeds() {
        let t = Arc::new(Flaky {
            failures: 2,
            kind: FailureKind::Transient,
            calls: AtomicU32::new(0),
        });
        let gw = Gateway::new(t.clone(), None, opts(3));
        let r = gw.query_model(&spec("a"), "v1", "p", 0, "t").unwrap();
        assert_eq!(r.attempts, 3);
        let v = gw
            .assess_task(&PromptTemplate::default_v1(), 1, "x", &[spec("b")])
            .unwrap();
        assert_eq!(v.slots[0].as_ref().unwrap().attempt_count, 1);
    }

    #[test]
    fn retries_exhausted_carries_context() {
        let t = Arc::new(Flaky {
            failures: 10,
            kind: FailureKind::Transient,
            calls: AtomicU32::new(0),
        });
        let gw = Gateway::new(t.clone(), None, opts(2));
        let err = gw.query_model(&spec("a"), "v1", "p", 0, "task 77").unwrap_err();
        assert!(err.to_string().contains("task 77"), "{err}");
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn auth_is_fatal_and_not_retried() {
        let t = Arc::new(Flaky {
            failures: 10,
            kind: FailureKind::Auth,
            calls: AtomicU32::new(0),
        });
        let gw = Gateway::new(t.clone(), None, opts(5));
        let err = gw
            .assess_task(&PromptTemplate::default_v1(), 1, "x", &[spec("a"), spec("b")])
            .unwrap_err();
        assert!(matches!(err, GatewayError::Auth { .. }));
        assert_eq!(t.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn cache_hit_avoids_network() {
        let dir = tempfile::tempdir().unwrap();
        let t = fixed(&[("a", "[4, \"x\"]")]);
        let gw = Gateway::new(t.clone(), Some(JsonCache::new(dir.path())), opts(0));
        gw.query_model(&spec("a"), "v1", "p", 0, "t").unwrap();
        let r = gw.query_model(&spec("a"), "v1", "p", 0, "t").unwrap();
        assert!(r.from_cache);
        assert_eq!(r.text, "[4, \"x\"]");
        assert_eq!(t.1.load(Ordering::SeqCst), 1);
        // another template version is a different key
        let r = gw.query_model(&spec("a"), "v2", "p", 0, "t").unwrap();
        assert!(!r.from_cache);
    }

    #[test]
    fn assess_three_mocks() {
        let t = fixed(&[("m", "[4, \"a\"]"), ("o", "[4, \"b\"]"), ("c", "[3, \"c\"]")]);
        let gw = Gateway::new(t, None, opts(0));
        let v = gw
            .assess_task(
                &PromptTemplate::default_v1(),
                1,
                "x",
                &[spec("m"), spec("o"), spec("c")],
            )
            .unwrap();
        let ratings: Vec<i64> = v.slots.iter().map(|s| s.as_ref().unwrap().rating).collect();
        assert_eq!(ratings, vec![4, 4, 3]);
        assert!(!v.needs_review());
    }

    #[test]
    fn one_model_down() {
        let t = fixed(&[("m", "[4, \"a\"]"), ("c", "[3, \"c\"]")]);
        let gw = Gateway::new(t, None, opts(1));
        let v = gw
            .assess_task(
                &PromptTemplate::default_v1(),
                1,
                "x",
                &[spec("m"), spec("o"), spec("c")],
            )
            .unwrap();
        assert!(v.slots[1].is_none());
        assert_eq!(v.usable(), 2);
        assert_eq!(v.missing[0].model_id, "o");
        assert!(!v.needs_review());
    }

    #[test]
    fn two_models_down_flags_task() {
        let t = fixed(&[("m", "[4, \"a\"]")]);
        let gw = Gateway::new(t, None, opts(0));
        let v = gw
            .assess_task(
                &PromptTemplate::default_v1(),
                1,
                "x",
                &[spec("m"), spec("o"), spec("c")],
            )
            .unwrap();
        assert_eq!(v.usable(), 1);
        assert!(v.needs_review());
    }

    #[test]
    fn unparseable_replies_requeried_then_missing() {
        let t = fixed(&[("m", "I cannot rate this.")]);
        let gw = Gateway::new(t.clone(), None, opts(0));
        let v = gw
            .assess_task(&PromptTemplate::default_v1(), 1, "x", &[spec("m")])
            .unwrap();
        assert!(v.slots[0].is_none());
        assert_eq!(t.1.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let gw = Gateway::new(fixed(&[]), None, opts(0));
        assert!(gw
            .assess_task(&PromptTemplate::default_v1(), 1, "x", &[spec("a"), spec("a")])
            .is_err());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(3), Duration::from_millis(350));
    }

    #[test]
    fn spec_validation() {
        assert!(spec("a").validate().is_ok());
        let mut s = spec("a");
        s.endpoint_url = "localhost".into();
        assert!(s.validate().is_err());
        let mut s = spec("a");
        s.api_key_env = Some("TEAI_TEST_SURELY_UNSET_VAR".into());
        assert!(matches!(s.check_credentials(), Err(GatewayError::Auth { .. })));
    }
}
