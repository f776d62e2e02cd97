//! Parsers for the O*NET distribution files and BLS employment tables.

mod employment;
mod skills;
mod soc;
mod table;
mod tasks;

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use employment::{parse_employment, read_employment_csv, write_employment_csv, EmploymentParse, EmploymentRecord};
pub use skills::{
    parse_skills, read_skills_csv, write_skills_csv, SkillClass, SkillClassMap, SkillRecord, SkillsParse,
};
pub use soc::{InvalidSocCode, SocCode};
pub use table::{read_text, two_column};
pub use tasks::{
    collapse_frequency, median, merge_tasks, parse_task_ratings, parse_task_statements, parse_weight_overrides,
    read_tasks_csv, write_tasks_csv, FrequencyDistribution, ImputationPolicy, MergeOutcome, PartialWeights,
    RatingIssue, RatingsParse, StatementsParse, TaskRating, TaskRecord, TaskStatement, WeightOverrides,
    FREQUENCY_SUM_TOLERANCE, TASKS_HEADER,
};

use table::Table;

/// A problem with one input row; the row is skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

impl RowIssue {
    pub fn new(line: u64, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("input is not valid UTF-8: {0}")]
    Encoding(String),
    #[error("missing header row")]
    MissingHeader,
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("{0}")]
    Row(RowIssue),
    #[error("skill {name:?} ({id}) has no class in the class map")]
    UnknownSkill { id: String, name: String },
    #[error("no frequency data")]
    NoFrequencyData,
    #[error("validation error: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupation {
    pub soc: SocCode,
    pub title: String,
}

/// Reads the O*NET "Occupation Data" file (code and title columns).
pub fn parse_occupations<R: Read>(reader: R) -> Result<(Vec<Occupation>, Vec<RowIssue>), IngestError> {
    let text = read_text(reader)?;
    let table = Table::tab(&text)?;
    let soc_col = table.require(&["O*NET-SOC Code"])?;
    let title_col = table.require(&["Title"])?;
    let mut issues = table.malformed.clone();
    let mut out = Vec::new();
    for row in &table.rows {
        let title = row.get(title_col);
        match SocCode::parse(row.get(soc_col)) {
            Ok(soc) if !title.is_empty() => out.push(Occupation {
                soc,
                title: title.to_string(),
            }),
            Ok(_) => issues.push(RowIssue::new(row.line, "empty title")),
            Err(e) => issues.push(RowIssue::new(row.line, e.to_string())),
        }
    }
    Ok((out, issues))
}

pub fn write_occupations_csv<W: Write>(writer: W, occs: &[Occupation]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    for o in occs {
        w.serialize(o)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_occupations_csv<R: Read>(reader: R) -> Result<Vec<Occupation>, IngestError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    r.deserialize().map(|r| r.map_err(IngestError::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupation_data() {
        let text = "O*NET-SOC Code\tTitle\tDescription\n11-3012.00\tAdministrative Services Managers\tPlan...\n53-3054.00\t\tx\n";
        let (occs, issues) = parse_occupations(text.as_bytes()).unwrap();
        assert_eq!(occs.len(), 1);
        assert_eq!(occs[0].title, "Administrative Services Managers");
        assert_eq!(issues.len(), 1);
    }
}
