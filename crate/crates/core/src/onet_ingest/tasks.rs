use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::table::{read_text, Table};
use super::{IngestError, RowIssue, SocCode};

pub const RELEVANCE_MAX: f64 = 100.0;
pub const IMPORTANCE_RANGE: (f64, f64) = (1.0, 5.0);
pub const FREQUENCY_RANGE: (f64, f64) = (1.0, 7.0);
/// Allowed deviation of the frequency shares from 100 (source rounding).
pub const FREQUENCY_SUM_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStatement {
    pub task_id: u64,
    pub soc: SocCode,
    pub description: String,
}

#[derive(Debug, Default)]
pub struct StatementsParse {
    pub records: Vec<TaskStatement>,
    pub errors: Vec<RowIssue>,
}

impl StatementsParse {
    pub fn n_tasks(&self) -> usize {
        self.records.len()
    }

    pub fn n_occupations(&self) -> usize {
        self.records.iter().map(|r| &r.soc).collect::<BTreeSet<_>>().len()
    }
}

pub fn parse_task_statements<R: Read>(reader: R) -> Result<StatementsParse, IngestError> {
    let text = read_text(reader)?;
    let table = Table::tab(&text)?;
    let soc_col = table.require(&["O*NET-SOC Code"])?;
    let id_col = table.require(&["Task ID"])?;
    let task_col = table.require(&["Task"])?;

    let mut out = StatementsParse {
        errors: table.malformed.clone(),
        ..Default::default()
    };
    for row in &table.rows {
        let soc = match SocCode::parse(row.get(soc_col)) {
            Ok(s) => s,
            Err(e) => {
                out.errors.push(RowIssue::new(row.line, e.to_string()));
                continue;
            }
        };
        let Ok(task_id) = row.get(id_col).parse::<u64>() else {
            out.errors
                .push(RowIssue::new(row.line, format!("bad task id {:?}", row.get(id_col))));
            continue;
        };
        let description = row.get(task_col).to_string();
        if description.is_empty() {
            out.errors.push(RowIssue::new(row.line, "empty task description"));
            continue;
        }
        out.records.push(TaskStatement {
            task_id,
            soc,
            description,
        });
    }
    out.errors.sort_by_key(|e| e.line);
    Ok(out)
}

/// Shares (percent) of respondents per frequency category 1..=7.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrequencyDistribution(pub [f64; 7]);

impl FrequencyDistribution {
    pub fn from_pairs(pairs: &[(usize, f64)]) -> Self {
        let mut d = [0.0; 7];
        for &(c, share) in pairs {
            d[c - 1] = share;
        }
        Self(d)
    }

    pub fn share(&self, category: usize) -> f64 {
        self.0[category - 1]
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Expected category index of a frequency distribution.
pub fn collapse_frequency(dist: &FrequencyDistribution) -> Result<f64, IngestError> {
    let total = dist.total();
    if dist.0.iter().any(|s| *s < 0.0 || !s.is_finite()) {
        return Err(IngestError::Validation("negative frequency share".into()));
    }
    if total <= 0.0 {
        return Err(IngestError::NoFrequencyData);
    }
    let weighted: f64 = dist
        .0
        .iter()
        .enumerate()
        .map(|(i, s)| (i + 1) as f64 * (s / total))
        .sum();
    Ok(weighted.clamp(FREQUENCY_RANGE.0, FREQUENCY_RANGE.1))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskRating {
    pub soc: Option<SocCode>,
    pub relevance: Option<f64>,
    pub importance: Option<f64>,
    pub frequency: Option<FrequencyDistribution>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RatingIssue {
    FrequencySum { task_id: u64, sum: f64 },
    Row(RowIssue),
}

#[derive(Debug, Default)]
pub struct RatingsParse {
    pub ratings: BTreeMap<u64, TaskRating>,
    /// Validation failures; affected values are left unset.
    pub errors: Vec<RatingIssue>,
    pub warnings: Vec<RowIssue>,
}

pub fn parse_task_ratings<R: Read>(reader: R) -> Result<RatingsParse, IngestError> {
    let text = read_text(reader)?;
    let table = Table::tab(&text)?;
    let soc_col = table.require(&["O*NET-SOC Code"])?;
    let id_col = table.require(&["Task ID"])?;
    let scale_col = table.require(&["Scale ID"])?;
    let cat_col = table.require(&["Category"])?;
    let val_col = table.require(&["Data Value"])?;

    let mut out = RatingsParse::default();
    out.errors.extend(table.malformed.iter().cloned().map(RatingIssue::Row));
    let mut freq_pairs: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();

    for row in &table.rows {
        let Ok(task_id) = row.get(id_col).parse::<u64>() else {
            out.errors.push(RatingIssue::Row(RowIssue::new(
                row.line,
                format!("bad task id {:?}", row.get(id_col)),
            )));
            continue;
        };
        let Ok(value) = row.get(val_col).parse::<f64>() else {
            out.errors.push(RatingIssue::Row(RowIssue::new(
                row.line,
                format!("bad data value {:?}", row.get(val_col)),
            )));
            continue;
        };
        let scale = row.get(scale_col);
        let entry = out.ratings.entry(task_id).or_default();
        if entry.soc.is_none() {
            entry.soc = SocCode::parse(row.get(soc_col)).ok();
        }
        let range_err = |what: &str| {
            RatingIssue::Row(RowIssue::new(
                row.line,
                format!("{what} value {value} out of range for task {task_id}"),
            ))
        };
        match scale {
            "RT" => {
                if !(0.0..=RELEVANCE_MAX).contains(&value) {
                    out.errors.push(range_err("relevance"));
                } else {
                    entry.relevance = Some(value);
                }
            }
            "IM" => {
                if !(IMPORTANCE_RANGE.0..=IMPORTANCE_RANGE.1).contains(&value) {
                    out.errors.push(range_err("importance"));
                } else {
                    entry.importance = Some(value);
                }
            }
            "FT" => match row.get(cat_col).parse::<usize>() {
                Ok(c) if (1..=7).contains(&c) && value >= 0.0 => {
                    freq_pairs.entry(task_id).or_default().push((c, value));
                }
                _ => out.errors.push(RatingIssue::Row(RowIssue::new(
                    row.line,
                    format!("bad frequency category {:?}", row.get(cat_col)),
                ))),
            },
            other => {
                tracing::warn!(line = row.line, "unknown scale id {other:?}, row skipped");
                out.warnings
                    .push(RowIssue::new(row.line, format!("unknown scale id {other:?}")));
            }
        }
    }

    for (task_id, pairs) in freq_pairs {
        let dist = FrequencyDistribution::from_pairs(&pairs);
        let sum = dist.total();
        if (sum - 100.0).abs() > FREQUENCY_SUM_TOLERANCE {
            out.errors.push(RatingIssue::FrequencySum { task_id, sum });
            continue;
        }
        if let Some(r) = out.ratings.get_mut(&task_id) {
            r.frequency = Some(dist);
        }
    }
    Ok(out)
}

/// One O*NET task with its aggregation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub soc: SocCode,
    pub task_id: u64,
    pub description: String,
    pub relevance: f64,
    pub importance: f64,
    pub frequency: f64,
    pub weights_imputed: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PartialWeights {
    pub relevance: Option<f64>,
    pub importance: Option<f64>,
    pub frequency: Option<f64>,
}

impl PartialWeights {
    fn is_complete(&self) -> bool {
        self.relevance.is_some() && self.importance.is_some() && self.frequency.is_some()
    }

    /// Fills the unset fields from `other`.
    fn or(self, other: PartialWeights) -> PartialWeights {
        PartialWeights {
            relevance: self.relevance.or(other.relevance),
            importance: self.importance.or(other.importance),
            frequency: self.frequency.or(other.frequency),
        }
    }
}

/// Manually assigned weights, keyed by task or by occupation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightOverrides {
    pub by_task: BTreeMap<u64, PartialWeights>,
    pub by_soc: BTreeMap<SocCode, PartialWeights>,
}

impl WeightOverrides {
    pub fn is_empty(&self) -> bool {
        self.by_task.is_empty() && self.by_soc.is_empty()
    }
}

/// Reads an override table. Header must contain `task_id` or `soc` and any of
/// `relevance`, `importance`, `frequency`; empty cells leave a field unset.
pub fn parse_weight_overrides<R: Read>(reader: R) -> Result<WeightOverrides, IngestError> {
    let text = read_text(reader)?;
    let table = Table::sniffed(&text)?;
    let task_col = table.find(&["task_id", "Task ID"]);
    let soc_col = table.find(&["soc", "O*NET-SOC Code"]);
    if task_col.is_none() && soc_col.is_none() {
        return Err(IngestError::MissingColumn("soc or task_id".into()));
    }
    let cols = [
        table.find(&["relevance", "R"]),
        table.find(&["importance", "I"]),
        table.find(&["frequency", "F"]),
    ];
    if let Some(bad) = table.malformed.first() {
        return Err(IngestError::Row(bad.clone()));
    }
    let mut out = WeightOverrides::default();
    for row in &table.rows {
        let mut vals = [None; 3];
        for (slot, col) in vals.iter_mut().zip(cols) {
            if let Some(c) = col {
                let cell = row.get(c);
                if !cell.is_empty() {
                    *slot = Some(
                        cell.parse::<f64>()
                            .map_err(|_| IngestError::Row(RowIssue::new(row.line, format!("bad number {cell:?}"))))?,
                    );
                }
            }
        }
        let w = PartialWeights {
            relevance: vals[0],
            importance: vals[1],
            frequency: vals[2],
        };
        check_weights(&w).map_err(|m| IngestError::Row(RowIssue::new(row.line, m)))?;
        let task = task_col.map(|c| row.get(c)).filter(|s| !s.is_empty());
        if let Some(t) = task {
            let id = t
                .parse::<u64>()
                .map_err(|_| IngestError::Row(RowIssue::new(row.line, format!("bad task id {t:?}"))))?;
            out.by_task.insert(id, w);
        } else if let Some(c) = soc_col {
            let soc =
                SocCode::normalize(row.get(c)).map_err(|e| IngestError::Row(RowIssue::new(row.line, e.to_string())))?;
            out.by_soc.insert(soc, w);
        }
    }
    Ok(out)
}

fn check_weights(w: &PartialWeights) -> Result<(), String> {
    if w.relevance.is_some_and(|r| !(0.0..=RELEVANCE_MAX).contains(&r)) {
        return Err("relevance outside [0,100]".into());
    }
    if w.importance
        .is_some_and(|v| !(IMPORTANCE_RANGE.0..=IMPORTANCE_RANGE.1).contains(&v))
    {
        return Err("importance outside [1,5]".into());
    }
    if w.frequency
        .is_some_and(|v| !(FREQUENCY_RANGE.0..=FREQUENCY_RANGE.1).contains(&v))
    {
        return Err("frequency outside [1,7]".into());
    }
    Ok(())
}

/// Missing weights are filled with the median of the occupation's rated
/// tasks, falling back to the corpus median; manual overrides win over both.
#[derive(Debug, Clone, Default)]
pub struct ImputationPolicy {
    pub overrides: WeightOverrides,
}

#[derive(Debug, Default)]
pub struct MergeOutcome {
    pub tasks: Vec<TaskRecord>,
    pub warnings: Vec<String>,
}

impl MergeOutcome {
    pub fn n_imputed(&self) -> usize {
        self.tasks.iter().filter(|t| t.weights_imputed).count()
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

#[derive(Default)]
struct Columns {
    relevance: Vec<f64>,
    importance: Vec<f64>,
    frequency: Vec<f64>,
}

impl Columns {
    fn push(&mut self, w: &PartialWeights) {
        self.relevance.extend(w.relevance);
        self.importance.extend(w.importance);
        self.frequency.extend(w.frequency);
    }

    fn medians(mut self) -> PartialWeights {
        PartialWeights {
            relevance: median(&mut self.relevance),
            importance: median(&mut self.importance),
            frequency: median(&mut self.frequency),
        }
    }
}

pub fn merge_tasks(
    statements: &[TaskStatement],
    ratings: &BTreeMap<u64, TaskRating>,
    policy: &ImputationPolicy,
) -> Result<MergeOutcome, IngestError> {
    let mut out = MergeOutcome::default();
    let known: BTreeSet<u64> = statements.iter().map(|s| s.task_id).collect();
    for id in ratings.keys().filter(|id| !known.contains(id)) {
        let msg = format!("task {id} has ratings but no statement; ignored");
        tracing::warn!("{msg}");
        out.warnings.push(msg);
    }

    let mut observed: Vec<PartialWeights> = Vec::with_capacity(statements.len());
    for s in statements {
        let w = match ratings.get(&s.task_id) {
            Some(r) => PartialWeights {
                relevance: r.relevance,
                importance: r.importance,
                frequency: r.frequency.as_ref().map(collapse_frequency).transpose()?,
            },
            None => PartialWeights::default(),
        };
        observed.push(w);
    }

    let mut by_soc: BTreeMap<&SocCode, Columns> = BTreeMap::new();
    let mut corpus = Columns::default();
    for (s, w) in statements.iter().zip(&observed) {
        by_soc.entry(&s.soc).or_default().push(w);
        corpus.push(w);
    }
    let corpus = corpus.medians();
    let soc_medians: BTreeMap<&SocCode, PartialWeights> = by_soc.into_iter().map(|(k, v)| (k, v.medians())).collect();

    for (s, w) in statements.iter().zip(observed) {
        let imputed = !w.is_complete();
        let filled = if imputed {
            let manual = policy
                .overrides
                .by_task
                .get(&s.task_id)
                .copied()
                .unwrap_or_default()
                .or(policy.overrides.by_soc.get(&s.soc).copied().unwrap_or_default());
            w.or(manual).or(soc_medians[&s.soc]).or(corpus)
        } else {
            w
        };
        let (Some(relevance), Some(importance), Some(frequency)) =
            (filled.relevance, filled.importance, filled.frequency)
        else {
            return Err(IngestError::Validation(format!(
                "no ratings anywhere in the corpus to impute task {} from",
                s.task_id
            )));
        };
        out.tasks.push(TaskRecord {
            soc: s.soc.clone(),
            task_id: s.task_id,
            description: s.description.clone(),
            relevance,
            importance,
            frequency,
            weights_imputed: imputed,
        });
    }
    Ok(out)
}

pub const TASKS_HEADER: [&str; 7] = [
    "soc",
    "task_id",
    "description",
    "relevance",
    "importance",
    "frequency",
    "weights_imputed",
];

pub fn write_tasks_csv<W: Write>(writer: W, tasks: &[TaskRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TASKS_HEADER)?;
    for t in tasks {
        w.write_record([
            t.soc.as_str(),
            &t.task_id.to_string(),
            &t.description,
            &t.relevance.to_string(),
            &t.importance.to_string(),
            &t.frequency.to_string(),
            if t.weights_imputed { "true" } else { "false" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tasks_csv<R: Read>(reader: R) -> Result<Vec<TaskRecord>, IngestError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
