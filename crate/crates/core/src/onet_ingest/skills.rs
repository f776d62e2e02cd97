use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::table::{read_text, two_column, Table};
use super::{IngestError, RowIssue, SocCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillClass {
    Cognitive,
    Social,
    ProblemSolvingManagement,
    Technical,
}

impl SkillClass {
    pub const ALL: [SkillClass; 4] = [
        SkillClass::Cognitive,
        SkillClass::Social,
        SkillClass::ProblemSolvingManagement,
        SkillClass::Technical,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SkillClass::Cognitive => "cognitive",
            SkillClass::Social => "social",
            SkillClass::ProblemSolvingManagement => "problem_solving_management",
            SkillClass::Technical => "technical",
        }
    }
}

impl fmt::Display for SkillClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkillClass {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "cognitive" => Ok(SkillClass::Cognitive),
            "social" => Ok(SkillClass::Social),
            "problemsolvingmanagement" | "problemsolvingandmanagement" => Ok(SkillClass::ProblemSolvingManagement),
            "technical" => Ok(SkillClass::Technical),
            _ => Err(IngestError::Config(format!("unknown skill class {s:?}"))),
        }
    }
}

/// Skill → class assignment, keyed by O*NET element id or element name.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillClassMap(BTreeMap<String, SkillClass>);

/// The 35 O*NET skills: Basic Skills (content and process) are cognitive,
/// Social Skills social, Complex Problem Solving plus Systems and Resource
/// Management skills problem-solving/management, Technical Skills technical.
const DEFAULT_SKILLS: [(&str, &str, SkillClass); 35] = {
    use SkillClass::*;
    [
        ("2.A.1.a", "Reading Comprehension", Cognitive),
        ("2.A.1.b", "Active Listening", Cognitive),
        ("2.A.1.c", "Writing", Cognitive),
        ("2.A.1.d", "Speaking", Cognitive),
        ("2.A.1.e", "Mathematics", Cognitive),
        ("2.A.1.f", "Science", Cognitive),
        ("2.A.2.a", "Critical Thinking", Cognitive),
        ("2.A.2.b", "Active Learning", Cognitive),
        ("2.A.2.c", "Learning Strategies", Cognitive),
        ("2.A.2.d", "Monitoring", Cognitive),
        ("2.B.1.a", "Social Perceptiveness", Social),
        ("2.B.1.b", "Coordination", Social),
        ("2.B.1.c", "Persuasion", Social),
        ("2.B.1.d", "Negotiation", Social),
        ("2.B.1.e", "Instructing", Social),
        ("2.B.1.f", "Service Orientation", Social),
        ("2.B.2.i", "Complex Problem Solving", ProblemSolvingManagement),
        ("2.B.3.a", "Operations Analysis", Technical),
        ("2.B.3.b", "Technology Design", Technical),
        ("2.B.3.c", "Equipment Selection", Technical),
        ("2.B.3.d", "Installation", Technical),
        ("2.B.3.e", "Programming", Technical),
        ("2.B.3.g", "Operations Monitoring", Technical),
        ("2.B.3.h", "Operation and Control", Technical),
        ("2.B.3.j", "Equipment Maintenance", Technical),
        ("2.B.3.k", "Troubleshooting", Technical),
        ("2.B.3.l", "Repairing", Technical),
        ("2.B.3.m", "Quality Control Analysis", Technical),
        ("2.B.4.e", "Judgment and Decision Making", ProblemSolvingManagement),
        ("2.B.4.g", "Systems Analysis", ProblemSolvingManagement),
        ("2.B.4.h", "Systems Evaluation", ProblemSolvingManagement),
        ("2.B.5.a", "Time Management", ProblemSolvingManagement),
        ("2.B.5.b", "Management of Financial Resources", ProblemSolvingManagement),
        ("2.B.5.c", "Management of Material Resources", ProblemSolvingManagement),
        ("2.B.5.d", "Management of Personnel Resources", ProblemSolvingManagement),
    ]
};

impl Default for SkillClassMap {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        for (id, name, class) in DEFAULT_SKILLS {
            m.insert(id.to_string(), class);
            m.insert(name.to_string(), class);
        }
        Self(m)
    }
}

impl SkillClassMap {
    pub fn from_pairs<I: IntoIterator<Item = (String, SkillClass)>>(pairs: I) -> Self {
        Self(pairs.into_iter().collect())
    }

    /// Two-column file `skill,class`; a header row is allowed.
    pub fn parse<R: Read>(reader: R) -> Result<Self, IngestError> {
        let text = read_text(reader)?;
        let mut m = BTreeMap::new();
        for (i, (line, key, class)) in two_column(&text).into_iter().enumerate() {
            match class.parse::<SkillClass>() {
                Ok(c) => {
                    m.insert(key, c);
                }
                Err(_) if i == 0 => continue,
                Err(e) => return Err(IngestError::Row(RowIssue::new(line, e.to_string()))),
            }
        }
        Ok(Self(m))
    }

    pub fn lookup(&self, id: &str, name: &str) -> Option<SkillClass> {
        self.0.get(id).or_else(|| self.0.get(name)).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRecord {
    pub soc: SocCode,
    pub skill_id: String,
    pub skill_name: String,
    pub level: f64,
    pub importance: f64,
    pub class: SkillClass,
}

#[derive(Debug, Default)]
pub struct SkillsParse {
    pub records: Vec<SkillRecord>,
    pub warnings: Vec<RowIssue>,
}

#[derive(Default)]
struct Partial {
    name: String,
    level: Option<f64>,
    importance: Option<f64>,
    line: u64,
}

pub fn parse_skills<R: Read>(reader: R, class_map: &SkillClassMap) -> Result<SkillsParse, IngestError> {
    let text = read_text(reader)?;
    let table = Table::tab(&text)?;
    let soc_col = table.require(&["O*NET-SOC Code"])?;
    let id_col = table.require(&["Element ID"])?;
    let name_col = table.require(&["Element Name"])?;
    let scale_col = table.require(&["Scale ID"])?;
    let val_col = table.require(&["Data Value"])?;

    let mut out = SkillsParse {
        warnings: table.malformed.clone(),
        ..Default::default()
    };
    let mut acc: BTreeMap<(SocCode, String), Partial> = BTreeMap::new();
    for row in &table.rows {
        let soc = match SocCode::parse(row.get(soc_col)) {
            Ok(s) => s,
            Err(e) => {
                out.warnings.push(RowIssue::new(row.line, e.to_string()));
                continue;
            }
        };
        let Ok(value) = row.get(val_col).parse::<f64>() else {
            out.warnings.push(RowIssue::new(
                row.line,
                format!("bad data value {:?}", row.get(val_col)),
            ));
            continue;
        };
        let id = row.get(id_col).to_string();
        let name = row.get(name_col).to_string();
        if class_map.lookup(&id, &name).is_none() {
            return Err(IngestError::UnknownSkill { id, name });
        }
        let entry = acc.entry((soc, id)).or_default();
        entry.name = name;
        entry.line = row.line;
        match row.get(scale_col) {
            "LV" if (0.0..=7.0).contains(&value) => entry.level = Some(value),
            "IM" if (1.0..=5.0).contains(&value) => entry.importance = Some(value),
            "LV" | "IM" => out
                .warnings
                .push(RowIssue::new(row.line, format!("value {value} out of range"))),
            other => out
                .warnings
                .push(RowIssue::new(row.line, format!("unknown scale id {other:?}"))),
        }
    }
    for ((soc, id), p) in acc {
        match (p.level, p.importance) {
            (Some(level), Some(importance)) => {
                let class = class_map.lookup(&id, &p.name).expect("checked above");
                out.records.push(SkillRecord {
                    soc,
                    skill_id: id,
                    skill_name: p.name,
                    level,
                    importance,
                    class,
                });
            }
            _ => out.warnings.push(RowIssue::new(
                p.line,
                format!("skill {id} for {soc} lacks level or importance"),
            )),
        }
    }
    Ok(out)
}

pub fn write_skills_csv<W: Write>(writer: W, skills: &[SkillRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in skills {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_skills_csv<R: Read>(reader: R) -> Result<Vec<SkillRecord>, IngestError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    r.deserialize().map(|r| r.map_err(IngestError::from)).collect()
}
