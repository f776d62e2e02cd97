//! One line per acceptance criterion. Run with
//! `cargo test -p teai-cli --test acceptance`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teai_core::consensus::{centroid_similarity, consensus_metric, select_rating, EmbeddingVector, RatingScale};
use teai_core::exposure_index::{compute_teai, WeightedTask};
use teai_core::labor_analytics::{ols_fit, DataTable, RegressionSpec};
use teai_core::onet_ingest::parse_task_statements;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn all_triples() -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for a in 1..=5 {
        for b in 1..=5 {
            for c in 1..=5 {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// Per-rater form: 1 + (1/n) Σ_i log2(1 − |x_i − x̄| / 4).
fn consensus_oracle(r: &[i64]) -> f64 {
    let n = r.len() as f64;
    let mean = r.iter().sum::<i64>() as f64 / n;
    1.0 + r
        .iter()
        .map(|x| (1.0 - (*x as f64 - mean).abs() / 4.0).log2())
        .sum::<f64>()
        / n
}

fn c1_consensus_value() -> Outcome {
    let scale = RatingScale::default();
    let mut triples = Vec::new();
    for a in 1..=5i64 {
        for b in [a - 1, a + 1] {
            if (1..=5).contains(&b) {
                triples.extend([[a, a, b], [a, b, a], [b, a, a]]);
            }
        }
    }
    let start = Instant::now();
    let values: Vec<f64> = triples
        .iter()
        .map(|t| consensus_metric(t, scale, None).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let per_call = start.elapsed() / triples.len() as u32;
    for (t, v) in triples.iter().zip(&values) {
        ensure((v - 0.8286).abs() <= 5e-4, || format!("{t:?} gave {v:.6}"))?;
    }
    ensure(per_call < Duration::from_millis(1), || format!("{per_call:?} per call"))?;
    Ok(format!(
        "{} triples, value {:.4}, {:?} per call",
        triples.len(),
        values[0],
        per_call
    ))
}

fn c2_consensus_oracle() -> Outcome {
    let scale = RatingScale::default();
    let mut worst: f64 = 0.0;
    for t in all_triples() {
        let v = consensus_metric(&t, scale, None).map_err(|e| e.to_string())?;
        let o = consensus_oracle(&t);
        worst = worst.max((v - o).abs());
        ensure((v - o).abs() <= 1e-12, || format!("{t:?}: {v} vs oracle {o}"))?;
        let unanimous = t[0] == t[1] && t[1] == t[2];
        ensure(unanimous == (v == 1.0), || {
            format!("{t:?}: unanimity mismatch, value {v}")
        })?;
    }
    Ok(format!("125 triples, max deviation {worst:.1e}"))
}

fn mode_then_min(t: &[i64]) -> i64 {
    let mut counts = [0usize; 6];
    for r in t {
        counts[*r as usize] += 1;
    }
    let best = *counts.iter().max().unwrap();
    (1..=5).find(|v| counts[*v as usize] == best).unwrap() as i64
}

fn c3_selection_rule() -> Outcome {
    let scale = RatingScale::default();
    for t in all_triples() {
        let got = select_rating(&t, scale).map_err(|e| e.to_string())?;
        ensure(got == mode_then_min(&t), || format!("{t:?} selected {got}"))?;
    }
    for (t, want) in [([4, 4, 3], 4), ([1, 2, 1], 1), ([3, 2, 3], 3), ([2, 3, 2], 2)] {
        let got = select_rating(&t, scale).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("{t:?} selected {got}, expected {want}"))?;
    }
    Ok("125 triples plus 4 named cases".into())
}

fn c4_teai_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    for occ in 0..1000 {
        let n = rng.random_range(1..=6);
        let tasks: Vec<WeightedTask> = (0..n)
            .map(|_| WeightedTask {
                te: rng.random_range(1..=5) as f64,
                relevance: rng.random_range(1.0..=100.0),
                importance: rng.random_range(1.0..=5.0),
                frequency: rng.random_range(1.0..=7.0),
            })
            .collect();
        let num: f64 = tasks
            .iter()
            .map(|t| t.te * (t.relevance / 100.0) * (t.importance / 5.0) * (t.frequency / 7.0))
            .sum();
        let den: f64 = tasks
            .iter()
            .map(|t| (t.relevance / 100.0) * (t.importance / 5.0) * (t.frequency / 7.0))
            .sum();
        let oracle = num / den;
        let got = compute_teai(&tasks).map_err(|e| e.to_string())?.teai_raw;
        ensure((got - oracle).abs() <= 1e-12, || {
            format!("occupation {occ}: {got} vs {oracle}")
        })?;

        let lo = tasks.iter().map(|t| t.te).fold(f64::INFINITY, f64::min);
        let hi = tasks.iter().map(|t| t.te).fold(f64::NEG_INFINITY, f64::max);
        ensure(lo <= got && got <= hi, || {
            format!("occupation {occ}: {got} outside [{lo}, {hi}]")
        })?;

        let c: f64 = rng.random_range(0.1..10.0);
        for col in 0..3 {
            let scaled: Vec<WeightedTask> = tasks
                .iter()
                .map(|t| {
                    let mut s = *t;
                    match col {
                        0 => s.relevance *= c,
                        1 => s.importance *= c,
                        _ => s.frequency *= c,
                    }
                    s
                })
                .collect();
            let v = compute_teai(&scaled).map_err(|e| e.to_string())?.teai_raw;
            ensure((v - got).abs() <= 1e-12, || {
                format!("occupation {occ}: column {col} scaled by {c} moved {got} to {v}")
            })?;
        }
    }
    Ok("1000 occupations: oracle, bounds, rescaling".into())
}

fn c5_centroid() -> Outcome {
    let e = |v: Vec<f64>| EmbeddingVector::from_raw(v).map_err(|e| e.to_string());
    let v = vec![0.3, -1.2, 2.0, 0.5];
    let parallel = centroid_similarity(&[
        e(v.clone())?,
        e(v.iter().map(|x| x * 2.0).collect())?,
        e(v.iter().map(|x| x * 7.5).collect())?,
    ])
    .map_err(|e| e.to_string())?;
    let ortho = centroid_similarity(&[
        e(vec![1.0, 0.0, 0.0])?,
        e(vec![0.0, 1.0, 0.0])?,
        e(vec![0.0, 0.0, 1.0])?,
    ])
    .map_err(|e| e.to_string())?;
    let opposed = centroid_similarity(&[e(v.clone())?, e(v.clone())?, e(v.iter().map(|x| -x).collect())?])
        .map_err(|e| e.to_string())?;
    ensure((parallel - 1.0).abs() <= 1e-9, || format!("parallel {parallel}"))?;
    ensure((ortho - 1.0 / 3f64.sqrt()).abs() <= 1e-9, || {
        format!("orthonormal {ortho}")
    })?;
    ensure((opposed - 1.0 / 3.0).abs() <= 1e-9, || format!("(v, v, -v) {opposed}"))?;
    Ok(format!("{parallel:.12}, {ortho:.12}, {opposed:.12}"))
}

fn c6_corpus_parse() -> Outcome {
    let (path, expect) = match std::env::var_os("TEAI_ONET_TASK_STATEMENTS") {
        Some(p) => (PathBuf::from(p), (19281, 923)),
        None => (workspace().join("fixtures/onet/Task Statements.txt"), (18, 3)),
    };
    let start = Instant::now();
    let file = std::fs::File::open(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let parsed = parse_task_statements(file).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let got = (parsed.n_tasks(), parsed.n_occupations());
    ensure(got == expect, || {
        format!("{} gave {got:?}, expected {expect:?}", path.display())
    })?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    let which = if expect.0 == 18 {
        "fixture (set TEAI_ONET_TASK_STATEMENTS for the full file)"
    } else {
        "full file"
    };
    Ok(format!(
        "{which}: {} tasks, {} occupations in {elapsed:?}",
        got.0, got.1
    ))
}

fn panel(seed: u64, n: usize, g1: usize, g2: usize, noise: f64) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<usize> = (0..n)
        .map(|i| if i < g1 { i } else { rng.random_range(0..g1) })
        .collect();
    let b: Vec<usize> = (0..n)
        .map(|i| if i < g2 { i } else { rng.random_range(0..g2) })
        .collect();
    let fa: Vec<f64> = (0..g1).map(|_| rng.random_range(-3.0..3.0)).collect();
    let fb: Vec<f64> = (0..g2).map(|_| rng.random_range(-3.0..3.0)).collect();
    let x1: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| 1.5 + 0.7 * x1[i] - 1.3 * x2[i] + fa[a[i]] + fb[b[i]] + noise * rng.random_range(-1.0..1.0))
        .collect();
    let mut t = DataTable::new(n);
    t.add_complete("y", y);
    t.add_complete("x1", x1);
    t.add_complete("x2", x2);
    t.add_categorical("a", a.iter().map(|g| Some(format!("a{g}"))).collect());
    t.add_categorical("b", b.iter().map(|g| Some(format!("b{g}"))).collect());
    t
}

/// Explicit dummy-variable OLS: intercept, regressors, one dummy per
/// non-reference level of each factor. Returns the regressor coefficients.
fn dummy_ols(t: &DataTable, regs: &[&str], fe: &[&str]) -> Vec<f64> {
    let n = t.n_rows();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for r in regs {
        cols.push(t.numeric(r).unwrap().iter().map(|v| v.unwrap()).collect());
    }
    for f in fe {
        let keys: Vec<String> = t.categorical(f).unwrap().iter().map(|v| v.clone().unwrap()).collect();
        let levels: BTreeMap<&String, ()> = keys.iter().map(|k| (k, ())).collect();
        for level in levels.keys().skip(1) {
            cols.push(keys.iter().map(|k| f64::from(k == *level)).collect());
        }
    }
    let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let y = DVector::from_iterator(n, t.numeric("y").unwrap().iter().map(|v| v.unwrap()));
    let beta = (x.transpose() * &x)
        .lu()
        .solve(&(x.transpose() * y))
        .expect("full rank");
    (1..=regs.len()).map(|j| beta[j]).collect()
}

fn spec(fe: &[&str]) -> RegressionSpec {
    RegressionSpec {
        id: "acceptance".into(),
        dependent: "y".into(),
        regressors: vec!["x1".into(), "x2".into()],
        fixed_effects: fe.iter().map(|s| s.to_string()).collect(),
        cluster: None,
        weights: None,
    }
}

fn c7_fixed_effects() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = [0.0f64; 2];
    let instances = 40;
    for k in 0..instances {
        let n = rng.random_range(30..=200);
        let g1 = rng.random_range(2..8);
        let g2 = rng.random_range(2..6);
        let t = panel(1000 + k, n, g1, g2, 1.0);
        for (i, (fe, tol)) in [(&["a"][..], 1e-8), (&["a", "b"][..], 1e-6)].into_iter().enumerate() {
            let fit = ols_fit(&t, &spec(fe)).map_err(|e| format!("instance {k}: {e}"))?;
            let oracle = dummy_ols(&t, &["x1", "x2"], fe);
            for (c, o) in fit.coefficients.iter().zip(&oracle) {
                let d = (c.estimate - o).abs();
                worst[i] = worst[i].max(d);
                ensure(d <= tol, || format!("instance {k} {fe:?}: {} vs {o}", c.estimate))?;
            }
        }
    }
    let t = panel(99, 120, 5, 4, 0.0);
    let fit = ols_fit(&t, &spec(&["a", "b"])).map_err(|e| e.to_string())?;
    for (term, want) in [("x1", 0.7), ("x2", -1.3)] {
        let got = fit.coefficient(term).ok_or("missing term")?.estimate;
        ensure((got - want).abs() <= 1e-10, || format!("noiseless {term}: {got}"))?;
    }
    Ok(format!(
        "{instances} instances, max deviation {:.1e} one-way, {:.1e} two-way; noiseless exact",
        worst[0], worst[1]
    ))
}

fn run_all_stages(config: &Path, seed: &str) -> Result<(), String> {
    for stage in ["ingest", "score", "index", "analyze"] {
        let out = Command::new(env!("CARGO_BIN_EXE_teai"))
            .args([stage, "--config"])
            .arg(config)
            .args(["--mock", "--seed", seed])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.code() == Some(0), || {
            format!(
                "{stage} exited {:?}: {}",
                out.status.code(),
                String::from_utf8_lossy(&out.stderr)
            )
        })?;
    }
    Ok(())
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "manifest.json") {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c8_end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixtures = workspace().join("fixtures").canonicalize().map_err(|e| e.to_string())?;
    let template = std::fs::read_to_string(fixtures.join("teai.toml")).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let mut text = String::new();
        for line in template.lines() {
            let line = match line.split_once(" = ") {
                Some(("onet_dir", _)) => format!("onet_dir = {:?}", fixtures.join("onet")),
                Some(("employment_file", _)) => format!("employment_file = {:?}", fixtures.join("employment.csv")),
                Some(("file", _)) => format!("file = {:?}", fixtures.join("external_index.csv")),
                Some(("cache_dir", _)) => "cache_dir = \"cache\"".to_string(),
                Some(("output_dir", _)) => "output_dir = \"out\"".to_string(),
                _ => line.to_string(),
            };
            text.push_str(&line);
            text.push('\n');
        }
        let config = dir.join("teai.toml");
        std::fs::write(&config, text).map_err(|e| e.to_string())?;
        run_all_stages(&config, "7")?;
        outputs.push(files(&dir.join("out")));
    }
    ensure(outputs[0].len() >= 10, || {
        format!("only {} output files", outputs[0].len())
    })?;
    ensure(outputs[0].keys().eq(outputs[1].keys()), || {
        "output file sets differ".into()
    })?;
    for (name, bytes) in &outputs[0] {
        ensure(outputs[1][name] == *bytes, || {
            format!("{} differs between runs", name.display())
        })?;
    }

    let tertiles = String::from_utf8(outputs[0][Path::new("tertiles.csv")].clone()).map_err(|e| e.to_string())?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(tertiles.as_bytes());
    let mut total = 0.0;
    let mut tiers = 0;
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        if &row[1] == "all" {
            total += row[5].parse::<f64>().map_err(|e| e.to_string())?;
            tiers += 1;
        }
    }
    ensure(tiers == 3, || format!("{tiers} tertile rows"))?;
    ensure((total - 1.0).abs() <= 1e-9, || format!("shares sum to {total}"))?;
    Ok(format!(
        "{} files byte-identical across two runs; shares sum to {total:.12}",
        outputs[0].len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("consensus value on two-same-one-adjacent triples", c1_consensus_value),
        (
            "consensus matches per-rater oracle on all 125 triples",
            c2_consensus_oracle,
        ),
        ("rating selection is mode then minimum", c3_selection_rule),
        ("TEAI oracle, bounds and rescaling invariance", c4_teai_properties),
        ("centroid similarity reference cases", c5_centroid),
        ("task statement corpus counts", c6_corpus_parse),
        ("fixed-effect OLS against dummy-variable oracle", c7_fixed_effects),
        ("end-to-end mock run is deterministic", c8_end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS  {}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {}. {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "N/A   9. employment split, skill regressions, cross-index correlations and rolling \
         coefficients need live model runs over the full corpus; see the README runbook"
    );
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
