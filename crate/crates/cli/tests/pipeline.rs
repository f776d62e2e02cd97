use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use teai_cli::config::RunConfig;
use teai_cli::pipeline::{read_assessments, AssessmentStatus, Options, Pipeline, Status, Transports};
use teai_core::llm_gateway::{ChatTransport, ModelSpec, TransportError};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .canonicalize()
        .unwrap()
}

/// A run directory with the fixture corpus cut down to the first
/// `n_tasks` task statements.
struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new(n_tasks: usize, employment: bool, extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let onet = dir.path().join("onet");
        std::fs::create_dir_all(&onet).unwrap();
        for name in ["Task Ratings.txt", "Occupation Data.txt", "Skills.txt"] {
            std::fs::copy(fixtures().join("onet").join(name), onet.join(name)).unwrap();
        }
        let statements = std::fs::read_to_string(fixtures().join("onet/Task Statements.txt")).unwrap();
        let cut: Vec<&str> = statements.lines().take(n_tasks + 1).collect();
        std::fs::write(onet.join("Task Statements.txt"), cut.join("\n") + "\n").unwrap();
        let emp = if employment {
            format!("employment_file = {:?}\n", fixtures().join("employment.csv"))
        } else {
            String::new()
        };
        let mut config = format!(
            "[paths]\nonet_dir = \"onet\"\n{emp}cache_dir = \"cache\"\noutput_dir = \"out\"\n\n\
             [scoring]\nworkers = 1\nmax_retries = 0\nbase_delay_ms = 1\n\n"
        );
        for m in ["judge-a", "judge-b", "judge-c"] {
            config.push_str(&format!(
                "[[models]]\nmodel_id = \"{m}\"\nendpoint_url = \"http://127.0.0.1:9/v1\"\n\n"
            ));
        }
        config.push_str(extra);
        std::fs::write(dir.path().join("teai.toml"), config).unwrap();
        Self { dir }
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("teai.toml")
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join("out").join(name)
    }

    fn pipeline(&self) -> Pipeline {
        let opts = Options {
            mock: true,
            seed: Some(3),
            allow_partial_ensemble: false,
        };
        Pipeline::load(&self.config(), opts).unwrap()
    }

    fn teai(&self, stage: &str) -> (i32, String) {
        let out = Command::new(env!("CARGO_BIN_EXE_teai"))
            .args([stage, "--config"])
            .arg(self.config())
            .args(["--mock", "--seed", "3"])
            .output()
            .unwrap();
        (
            out.status.code().unwrap(),
            String::from_utf8_lossy(&out.stderr).into_owned(),
        )
    }
}

const FITTING_REGRESSION: &str = r#"
[[analytics.regressions]]
id = "fits"
table = "occupations"
dependent = "teai_norm"
regressors = ["sr_cognitive"]
"#;

const COLLINEAR_REGRESSION: &str = r#"
[[analytics.regressions]]
id = "collinear"
table = "occupations"
dependent = "teai_percentile"
regressors = ["teai_raw", "teai_norm"]
"#;

/// Fails every call with an authentication error once `limit` calls have gone through.
struct AuthAfter {
    inner: Arc<dyn ChatTransport>,
    limit: usize,
    calls: AtomicUsize,
}

impl ChatTransport for AuthAfter {
    fn complete(&self, spec: &ModelSpec, prompt: &str) -> Result<String, TransportError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.limit {
            return Err(TransportError::auth("HTTP 401: key revoked"));
        }
        self.inner.complete(spec, prompt)
    }
}

/// One model permanently unreachable.
struct ModelDown {
    inner: Arc<dyn ChatTransport>,
    down: &'static str,
}

impl ChatTransport for ModelDown {
    fn complete(&self, spec: &ModelSpec, prompt: &str) -> Result<String, TransportError> {
        if spec.model_id == self.down {
            return Err(TransportError::permanent("HTTP 404: no such model"));
        }
        self.inner.complete(spec, prompt)
    }
}

#[test]
fn ingest_writes_fixture_rows_and_reruns_identically() {
    let run = Run::new(18, true, "");
    assert_eq!(run.teai("ingest").0, 0);
    let tasks = std::fs::read_to_string(run.out("tasks.csv")).unwrap();
    // stamp line, header, 18 rows
    assert_eq!(tasks.lines().count(), 20);
    let names = [
        "tasks.csv",
        "occupations.csv",
        "skills.csv",
        "employment.csv",
        "notes/ingest.txt",
    ];
    let first: Vec<Vec<u8>> = names.iter().map(|n| std::fs::read(run.out(n)).unwrap()).collect();
    assert_eq!(run.teai("ingest").0, 0);
    for (n, bytes) in names.iter().zip(&first) {
        assert_eq!(&std::fs::read(run.out(n)).unwrap(), bytes, "{n}");
    }
}

#[test]
fn missing_task_ratings_is_a_validation_error() {
    let run = Run::new(18, false, "");
    let path = run.dir.path().join("onet/Task Ratings.txt");
    std::fs::remove_file(&path).unwrap();
    let (code, stderr) = run.teai("ingest");
    assert_eq!(code, 1);
    assert!(stderr.contains("Task Ratings.txt"), "{stderr}");
}

#[test]
fn later_stage_without_inputs_is_a_validation_error() {
    let run = Run::new(18, false, "");
    let (code, stderr) = run.teai("index");
    assert_eq!(code, 1);
    assert!(stderr.contains("tasks.csv"), "{stderr}");
}

#[test]
fn mock_run_scores_every_task() {
    let run = Run::new(10, false, "");
    assert_eq!(run.teai("ingest").0, 0);
    assert_eq!(run.teai("score").0, 0);
    let records = read_assessments(&run.out("assessments.jsonl")).unwrap();
    assert_eq!(records.len(), 10);
    let p = run.pipeline();
    for r in &records {
        assert_eq!(r.status, AssessmentStatus::Scored);
        assert_eq!(r.manifest_hash, p.manifest_hash());
        assert_eq!(r.verdicts.len(), 3);
        assert!(r.similarity.is_some());
        assert!((1..=5).contains(&r.te.unwrap()));
    }
}

#[test]
fn interrupted_scoring_resumes_from_cache() {
    let run = Run::new(10, false, "");
    let p = run.pipeline();
    assert_eq!(p.ingest().unwrap(), Status::Complete);

    let mock = p.transports().unwrap();
    let failing = AuthAfter {
        inner: mock.chat.clone(),
        limit: 15,
        calls: AtomicUsize::new(0),
    };
    let err = p
        .score_with(Transports {
            chat: Arc::new(failing),
            embedding: mock.embedding.clone(),
        })
        .unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!run.out("assessments.jsonl").exists());

    let (status, stats) = p.score_with(p.transports().unwrap()).unwrap();
    assert_eq!(status, Status::Complete);
    assert_eq!(stats.tasks, 10);
    assert_eq!(stats.chat_calls, 15);
    assert_eq!(read_assessments(&run.out("assessments.jsonl")).unwrap().len(), 10);

    let (_, again) = p.score_with(p.transports().unwrap()).unwrap();
    assert_eq!(again.chat_calls, 0);
    assert_eq!(again.embedding_calls, 0);
}

#[test]
fn model_down_leaves_two_verdicts_flagged() {
    let run = Run::new(6, false, "");
    let p = run.pipeline();
    p.ingest().unwrap();
    let mock = p.transports().unwrap();
    let (status, _) = p
        .score_with(Transports {
            chat: Arc::new(ModelDown {
                inner: mock.chat,
                down: "judge-b",
            }),
            embedding: mock.embedding,
        })
        .unwrap();
    assert_eq!(status, Status::Complete);
    for r in read_assessments(&run.out("assessments.jsonl")).unwrap() {
        assert_eq!(r.status, AssessmentStatus::Scored);
        assert!(r.partial_ensemble);
        assert_eq!(r.verdicts.iter().flatten().count(), 2);
        assert_eq!(r.missing.len(), 1);
        assert_eq!(r.missing[0].model_id, "judge-b");
    }
}

#[test]
fn without_employment_tertiles_carry_counts_only() {
    let run = Run::new(18, false, FITTING_REGRESSION);
    for stage in ["ingest", "score", "index", "analyze"] {
        assert_eq!(run.teai(stage).0, 0, "{stage}");
    }
    let text = std::fs::read_to_string(run.out("tertiles.csv")).unwrap();
    let mut rows = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut total = 0;
    for row in rows.records() {
        let row = row.unwrap();
        if &row[1] == "all" {
            total += row[3].parse::<usize>().unwrap();
            assert_eq!(&row[4], "");
            assert_eq!(&row[5], "");
        }
    }
    assert_eq!(total, 3);
    let report = std::fs::read_to_string(run.out("report.txt")).unwrap();
    assert!(report.contains("counts only"));
}

#[test]
fn failing_regression_is_isolated() {
    let run = Run::new(18, false, &format!("{FITTING_REGRESSION}{COLLINEAR_REGRESSION}"));
    for stage in ["ingest", "score", "index"] {
        assert_eq!(run.teai(stage).0, 0, "{stage}");
    }
    let (code, _) = run.teai("analyze");
    assert_eq!(code, 3);
    let regs = std::fs::read_to_string(run.out("regressions.csv")).unwrap();
    assert!(regs.lines().any(|l| l.starts_with("fits,sr_cognitive,")));
    assert!(!regs.contains("collinear"));
    let notes = std::fs::read_to_string(run.out("notes/analyze.txt")).unwrap();
    assert!(notes.contains("regression collinear:"), "{notes}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.out("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["counts"]["analyses_failed"], 1);
    assert_eq!(manifest["stages"]["analyze"]["status"], "partial");
}

#[test]
fn outputs_trace_back_to_inputs() {
    let run = Run::new(18, true, "");
    for stage in ["ingest", "score", "index"] {
        assert_eq!(run.teai(stage).0, 0, "{stage}");
    }
    let tasks = std::fs::read_to_string(run.out("tasks.csv")).unwrap();
    let statements = std::fs::read_to_string(run.dir.path().join("onet/Task Statements.txt")).unwrap();
    let pairs: std::collections::BTreeSet<(String, String)> = statements
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), f[1].to_string())
        })
        .collect();
    let mut rows = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(tasks.as_bytes());
    let headers = rows.headers().unwrap().clone();
    let soc = headers.iter().position(|h| h == "soc").unwrap();
    let id = headers.iter().position(|h| h == "task_id").unwrap();
    for row in rows.records() {
        let row = row.unwrap();
        assert!(pairs.contains(&(row[soc].to_string(), row[id].to_string())));
    }
    for r in read_assessments(&run.out("assessments.jsonl")).unwrap() {
        for s in &r.socs {
            assert!(pairs.contains(&(s.to_string(), r.task_id.to_string())));
        }
    }
}

#[test]
fn manifest_hash_follows_semantic_config() {
    let base = Run::new(6, false, "");
    let text = std::fs::read_to_string(base.config()).unwrap();
    let hash = |t: &str| {
        let cfg = RunConfig::parse(t, base.dir.path()).unwrap();
        Pipeline::new(
            cfg,
            Options {
                mock: true,
                seed: Some(3),
                allow_partial_ensemble: false,
            },
        )
        .unwrap()
        .manifest_hash()
        .to_string()
    };
    let h0 = hash(&text);
    assert_eq!(
        h0,
        hash(&text.replace("output_dir = \"out\"", "output_dir = \"elsewhere\""))
    );
    assert_ne!(
        h0,
        hash(&text.replacen("model_id = \"judge-a\"", "model_id = \"judge-z\"", 1))
    );
    assert_ne!(h0, hash(&format!("{text}\n[consensus]\nwidth = 5.0\n")));
    assert_ne!(
        h0,
        hash(&text.replace("workers = 1", "workers = 1\nrequery_budget = 0")),
        "requery budget"
    );

    std::fs::write(
        base.dir.path().join("onet/Task Ratings.txt"),
        std::fs::read_to_string(fixtures().join("onet/Task Ratings.txt")).unwrap() + "\n",
    )
    .unwrap();
    assert_ne!(h0, hash(&text), "input content");
}

#[test]
fn live_run_without_credentials_fails_before_any_request() {
    let run = Run::new(6, false, "");
    let text = std::fs::read_to_string(run.config()).unwrap().replacen(
        "endpoint_url = \"http://127.0.0.1:9/v1\"",
        "endpoint_url = \"http://127.0.0.1:9/v1\"\napi_key_env = \"TEAI_TEST_UNSET_KEY\"",
        1,
    );
    std::fs::write(run.config(), text).unwrap();
    assert_eq!(run.teai("ingest").0, 0);
    let out = Command::new(env!("CARGO_BIN_EXE_teai"))
        .args(["score", "--config"])
        .arg(run.config())
        .env_remove("TEAI_TEST_UNSET_KEY")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("TEAI_TEST_UNSET_KEY"));
}
