//! Occupation-level exposure index and per-class skill relevance.
//!
//! Both indexes are weighted means `Σ v·w / Σ w`. For the exposure index
//! the value is a task's fused rating and the weight the product of its
//! relevance, importance and frequency, each divided by its scale maximum
//! (100, 5 and 7). For skill relevance the weight is level/7 · importance/5
//! and the value is chosen by [`ValueSource`].

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::onet_ingest::{SkillClass, SkillRecord, SocCode, TaskRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("no tasks to aggregate")]
    NoTasks,
    #[error("every task has zero weight")]
    AllTasksDropped,
    #[error("need at least 2 occupations to normalize, got {0}")]
    TooFewOccupations(usize),
    #[error("no skills with positive weight in class")]
    EmptyClass,
    #[error("non-finite input value")]
    NonFinite,
}

pub const RELEVANCE_SCALE: f64 = 100.0;
pub const IMPORTANCE_SCALE: f64 = 5.0;
pub const FREQUENCY_SCALE: f64 = 7.0;
pub const LEVEL_SCALE: f64 = 7.0;

/// `Σ v·w / Σ w` over pairs with positive weight, clamped to the range of
/// the contributing values. `None` when no weight is positive.
pub fn weighted_mean<I: IntoIterator<Item = (f64, f64)>>(pairs: I) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (v, w) in pairs {
        if w > 0.0 {
            num += v * w;
            den += w;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (den > 0.0).then(|| (num / den).clamp(lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedTask {
    pub te: f64,
    pub relevance: f64,
    pub importance: f64,
    pub frequency: f64,
}

impl WeightedTask {
    pub fn weight(&self) -> f64 {
        (self.relevance / RELEVANCE_SCALE) * (self.importance / IMPORTANCE_SCALE) * (self.frequency / FREQUENCY_SCALE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeaiOutcome {
    pub teai_raw: f64,
    pub n_used: usize,
    pub n_dropped: usize,
}

pub fn compute_teai(tasks: &[WeightedTask]) -> Result<TeaiOutcome, IndexError> {
    if tasks.is_empty() {
        return Err(IndexError::NoTasks);
    }
    if tasks.iter().any(|t| !(t.te.is_finite() && t.weight().is_finite())) {
        return Err(IndexError::NonFinite);
    }
    let n_dropped = tasks.iter().filter(|t| t.weight() <= 0.0).count();
    if n_dropped > 0 {
        tracing::warn!("{n_dropped} zero-weight task(s) dropped");
    }
    let teai_raw = weighted_mean(tasks.iter().map(|t| (t.te, t.weight()))).ok_or(IndexError::AllTasksDropped)?;
    Ok(TeaiOutcome {
        teai_raw,
        n_used: tasks.len() - n_dropped,
        n_dropped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub norm: Vec<f64>,
    pub percentile: Vec<f64>,
    /// All raw scores were equal; `norm` is 0.5 throughout.
    pub degenerate: bool,
}

/// Ranks 1..=n with ties sharing their mean rank.
pub fn mean_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Min-max normalization to [0,1] and percentile rank (mean rank / n · 100).
pub fn normalize_scores(raw: &[f64]) -> Result<Normalized, IndexError> {
    if raw.len() < 2 {
        return Err(IndexError::TooFewOccupations(raw.len()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(IndexError::NonFinite);
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = raw.len() as f64;
    let percentile = mean_ranks(raw).into_iter().map(|r| r / n * 100.0).collect();
    if hi == lo {
        tracing::warn!("all raw scores equal; normalized scores set to 0.5");
        return Ok(Normalized {
            norm: vec![0.5; raw.len()],
            percentile,
            degenerate: true,
        });
    }
    Ok(Normalized {
        norm: raw.iter().map(|v| (v - lo) / (hi - lo)).collect(),
        percentile,
        degenerate: false,
    })
}

/// What a skill contributes as its value in the skill relevance index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    /// level / 7
    #[default]
    Level,
    /// importance / 5
    Importance,
    /// constant 1
    Unit,
}

impl ValueSource {
    pub fn value(&self, level: f64, importance: f64) -> f64 {
        match self {
            ValueSource::Level => level / LEVEL_SCALE,
            ValueSource::Importance => importance / IMPORTANCE_SCALE,
            ValueSource::Unit => 1.0,
        }
    }
}

pub fn skill_weight(level: f64, importance: f64) -> f64 {
    (level / LEVEL_SCALE) * (importance / IMPORTANCE_SCALE)
}

/// Skill relevance of one class in one occupation from its skills'
/// (level, importance) pairs.
pub fn compute_skill_relevance(skills: &[(f64, f64)], source: ValueSource) -> Result<f64, IndexError> {
    weighted_mean(skills.iter().map(|&(l, i)| (source.value(l, i), skill_weight(l, i)))).ok_or(IndexError::EmptyClass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationScore {
    pub soc: SocCode,
    pub title: String,
    pub teai_raw: f64,
    pub teai_norm: f64,
    pub teai_percentile: f64,
    pub n_tasks: usize,
    pub n_imputed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingOccupation {
    pub soc: SocCode,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutcome {
    pub scores: Vec<OccupationScore>,
    pub missing: Vec<MissingOccupation>,
    pub degenerate: bool,
}

/// Scores every occupation having at least one task with a fused rating.
/// `te` maps task id to fused rating; tasks absent from it are unscored.
pub fn score_occupations(
    tasks: &[TaskRecord],
    te: &BTreeMap<u64, i64>,
    titles: &BTreeMap<SocCode, String>,
) -> Result<ScoreOutcome, IndexError> {
    let mut by_soc: BTreeMap<&SocCode, Vec<&TaskRecord>> = BTreeMap::new();
    for t in tasks {
        by_soc.entry(&t.soc).or_default().push(t);
    }
    let mut raw = Vec::new();
    let mut missing = Vec::new();
    for (soc, ts) in by_soc {
        let scored: Vec<(&TaskRecord, WeightedTask)> = ts
            .iter()
            .filter_map(|t| {
                te.get(&t.task_id).map(|&r| {
                    (
                        *t,
                        WeightedTask {
                            te: r as f64,
                            relevance: t.relevance,
                            importance: t.importance,
                            frequency: t.frequency,
                        },
                    )
                })
            })
            .collect();
        if scored.is_empty() {
            missing.push(MissingOccupation {
                soc: soc.clone(),
                reason: "no scored tasks".into(),
            });
            continue;
        }
        let weighted: Vec<WeightedTask> = scored.iter().map(|(_, w)| *w).collect();
        match compute_teai(&weighted) {
            Ok(out) => raw.push(OccupationScore {
                soc: soc.clone(),
                title: titles.get(soc).cloned().unwrap_or_default(),
                teai_raw: out.teai_raw,
                teai_norm: f64::NAN,
                teai_percentile: f64::NAN,
                n_tasks: out.n_used,
                n_imputed: scored
                    .iter()
                    .filter(|(t, w)| t.weights_imputed && w.weight() > 0.0)
                    .count(),
            }),
            Err(e) => missing.push(MissingOccupation {
                soc: soc.clone(),
                reason: e.to_string(),
            }),
        }
    }
    let norm = normalize_scores(&raw.iter().map(|s| s.teai_raw).collect::<Vec<_>>())?;
    for (i, s) in raw.iter_mut().enumerate() {
        s.teai_norm = norm.norm[i];
        s.teai_percentile = norm.percentile[i];
    }
    Ok(ScoreOutcome {
        scores: raw,
        missing,
        degenerate: norm.degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRelevance {
    pub soc: SocCode,
    pub class: SkillClass,
    pub sr: f64,
    pub n_skills: usize,
}

/// Skill relevance for every (occupation, class) present in `skills`.
/// Classes whose skills all have zero weight are left out.
pub fn skill_relevance_table(skills: &[SkillRecord], source: ValueSource) -> Vec<SkillRelevance> {
    let mut groups: BTreeMap<(&SocCode, SkillClass), Vec<(f64, f64)>> = BTreeMap::new();
    for s in skills {
        groups
            .entry((&s.soc, s.class))
            .or_default()
            .push((s.level, s.importance));
    }
    groups
        .into_iter()
        .filter_map(|((soc, class), pairs)| match compute_skill_relevance(&pairs, source) {
            Ok(sr) => Some(SkillRelevance {
                soc: soc.clone(),
                class,
                sr,
                n_skills: pairs.len(),
            }),
            Err(e) => {
                tracing::warn!("{soc} {class}: {e}");
                None
            }
        })
        .collect()
}

pub const SCORES_HEADER: [&str; 7] = [
    "soc",
    "title",
    "teai_raw",
    "teai_norm",
    "teai_percentile",
    "n_tasks",
    "n_imputed",
];

pub fn write_occupation_scores<W: Write>(writer: W, scores: &[OccupationScore]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(SCORES_HEADER)?;
    for s in scores {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_occupation_scores<R: std::io::Read>(reader: R) -> csv::Result<Vec<OccupationScore>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    r.deserialize().collect()
}

pub fn write_skill_relevance<W: Write>(writer: W, rows: &[SkillRelevance]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["soc", "class", "sr", "n_skills"])?;
    for s in rows {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_skill_relevance<R: std::io::Read>(reader: R) -> csv::Result<Vec<SkillRelevance>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    r.deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn wt(te: f64, r: f64, i: f64, f: f64) -> WeightedTask {
        WeightedTask {
            te,
            relevance: r,
            importance: i,
            frequency: f,
        }
    }

    /// Direct evaluation of the exposure formula, kept separate from
    /// `compute_teai`.
    fn oracle(tasks: &[WeightedTask]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for t in tasks {
            let w = (t.relevance / 100.0) * (t.importance / 5.0) * (t.frequency / 7.0);
            num += t.te * w;
            den += w;
        }
        num / den
    }

    #[test]
    fn single_task_collapses() {
        let out = compute_teai(&[wt(4.0, 37.0, 2.2, 5.5)]).unwrap();
        assert_eq!(out.teai_raw, 4.0);
    }

    #[test]
    fn two_to_one_weights() {
        // weight products 2u and u: (5·2 + 1·1)/3 = 11/3
        let tasks = [wt(5.0, 100.0, 5.0, 7.0), wt(1.0, 50.0, 5.0, 7.0)];
        assert_abs_diff_eq!(compute_teai(&tasks).unwrap().teai_raw, 11.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn relevance_times_ten_unchanged() {
        let tasks = [wt(5.0, 8.0, 3.0, 2.0), wt(2.0, 5.0, 4.0, 6.0), wt(3.0, 1.0, 1.0, 1.0)];
        let scaled: Vec<_> = tasks
            .iter()
            .map(|t| wt(t.te, t.relevance * 10.0, t.importance, t.frequency))
            .collect();
        assert_abs_diff_eq!(
            compute_teai(&tasks).unwrap().teai_raw,
            compute_teai(&scaled).unwrap().teai_raw,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_relevance_dropped() {
        let out = compute_teai(&[wt(5.0, 0.0, 3.0, 3.0), wt(2.0, 50.0, 3.0, 3.0)]).unwrap();
        assert_eq!((out.teai_raw, out.n_used, out.n_dropped), (2.0, 1, 1));
        assert_eq!(
            compute_teai(&[wt(5.0, 0.0, 3.0, 3.0)]),
            Err(IndexError::AllTasksDropped)
        );
        assert_eq!(compute_teai(&[]), Err(IndexError::NoTasks));
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_scores(&[1.0, 3.0, 5.0]).unwrap();
        assert_eq!(n.norm, vec![0.0, 0.5, 1.0]);
        assert!(!n.degenerate);
        // mean ranks (1.5, 1.5, 3) scaled by 1/3 · 100
        let n = normalize_scores(&[2.0, 2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(n.percentile[0], 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n.percentile[1], 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n.percentile[2], 100.0, epsilon = 1e-12);
        assert_eq!(normalize_scores(&[3.0]), Err(IndexError::TooFewOccupations(1)));
        let n = normalize_scores(&[2.0, 2.0]).unwrap();
        assert!(n.degenerate);
        assert_eq!(n.norm, vec![0.5, 0.5]);
    }

    #[test]
    fn skill_relevance_examples() {
        // single skill with S = level/7 = 0.6
        assert_abs_diff_eq!(
            compute_skill_relevance(&[(4.2, 3.0)], ValueSource::Level).unwrap(),
            0.6,
            epsilon = 1e-12
        );
        // S = (1, 0) with weights (3u, u): 3/4
        assert_abs_diff_eq!(weighted_mean([(1.0, 3.0), (0.0, 1.0)]).unwrap(), 0.75, epsilon = 1e-12);
        let skills = [(7.0, 3.0), (2.0, 5.0), (4.0, 1.0)];
        let base = compute_skill_relevance(&skills, ValueSource::Importance).unwrap();
        let scaled: Vec<_> = skills.iter().map(|(l, i)| (*l, i * 0.5)).collect();
        // importance value changes with scaling, so compare the Unit and Level sources
        for src in [ValueSource::Level, ValueSource::Unit] {
            let a = compute_skill_relevance(&skills, src).unwrap();
            let b = compute_skill_relevance(&scaled, src).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(base > 0.0 && base <= 1.0);
        assert_eq!(
            compute_skill_relevance(&[(0.0, 3.0)], ValueSource::Level),
            Err(IndexError::EmptyClass)
        );
    }

    #[test]
    fn scores_per_occupation() {
        let soc = |s: &str| SocCode::parse(s).unwrap();
        let task = |s: &str, id: u64, imputed: bool| TaskRecord {
            soc: soc(s),
            task_id: id,
            description: "d".into(),
            relevance: 50.0,
            importance: 3.0,
            frequency: 4.0,
            weights_imputed: imputed,
        };
        let tasks = vec![
            task("11-3012.00", 1, false),
            task("11-3012.00", 2, true),
            task("53-3054.00", 3, false),
            task("29-1131.00", 4, false),
        ];
        let te = BTreeMap::from([(1, 4), (2, 2), (3, 1)]);
        let titles = BTreeMap::from([(soc("11-3012.00"), "Admin".to_string())]);
        let out = score_occupations(&tasks, &te, &titles).unwrap();
        assert_eq!(out.scores.len(), 2);
        assert_eq!(out.missing.len(), 1);
        assert_eq!(out.missing[0].soc, soc("29-1131.00"));
        let admin = &out.scores[0];
        assert_eq!((admin.teai_raw, admin.n_tasks, admin.n_imputed), (3.0, 2, 1));
        assert_eq!(admin.title, "Admin");
        assert_eq!(admin.teai_norm, 1.0);
        assert_eq!(out.scores[1].teai_norm, 0.0);

        let mut buf = Vec::new();
        write_occupation_scores(&mut buf, &out.scores).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("soc,title,teai_raw,teai_norm,teai_percentile,n_tasks,n_imputed\n"));
        assert_eq!(read_occupation_scores(buf.as_slice()).unwrap(), out.scores);
    }

    fn arb_task() -> impl Strategy<Value = WeightedTask> {
        (1i64..=5, 0.5f64..=100.0, 1.0f64..=5.0, 1.0f64..=7.0).prop_map(|(te, r, i, f)| wt(te as f64, r, i, f))
    }

    proptest! {
        #[test]
        fn matches_oracle_and_bounds(tasks in prop::collection::vec(arb_task(), 1..=6)) {
            let got = compute_teai(&tasks).unwrap().teai_raw;
            prop_assert!((got - oracle(&tasks)).abs() <= 1e-12);
            let lo = tasks.iter().map(|t| t.te).fold(f64::INFINITY, f64::min);
            let hi = tasks.iter().map(|t| t.te).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= got && got <= hi);
        }

        #[test]
        fn column_rescaling_invariant(
            tasks in prop::collection::vec(arb_task(), 1..=6),
            col in 0usize..3,
            k in 0.01f64..100.0
        ) {
            let scaled: Vec<_> = tasks.iter().map(|t| {
                let mut t = *t;
                match col { 0 => t.relevance *= k, 1 => t.importance *= k, _ => t.frequency *= k }
                t
            }).collect();
            let a = compute_teai(&tasks).unwrap().teai_raw;
            let b = compute_teai(&scaled).unwrap().teai_raw;
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn monotone_in_task_rating(
            tasks in prop::collection::vec(arb_task(), 1..=6),
            which in 0usize..6
        ) {
            let i = which % tasks.len();
            prop_assume!(tasks[i].te < 5.0);
            let mut bumped = tasks.clone();
            bumped[i].te += 1.0;
            prop_assert!(compute_teai(&bumped).unwrap().teai_raw > compute_teai(&tasks).unwrap().teai_raw);
        }

        #[test]
        fn normalization_preserves_order(raw in prop::collection::vec(1.0f64..5.0, 2..20)) {
            let n = normalize_scores(&raw).unwrap();
            for i in 0..raw.len() {
                for j in 0..raw.len() {
                    if raw[i] < raw[j] {
                        prop_assert!(n.percentile[i] < n.percentile[j]);
                        if !n.degenerate { prop_assert!(n.norm[i] < n.norm[j]); }
                    }
                }
            }
        }

        #[test]
        fn skill_relevance_bounded(skills in prop::collection::vec((0.1f64..=7.0, 1.0f64..=5.0), 1..8)) {
            let sr = compute_skill_relevance(&skills, ValueSource::Level).unwrap();
            let vals: Vec<f64> = skills.iter().map(|(l, _)| l / 7.0).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= sr && sr <= hi);
        }
    }
}
