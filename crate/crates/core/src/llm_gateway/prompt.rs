//! Five-shot assessment prompt.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::format_reply;

pub const SHOT_COUNT: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template must have exactly {SHOT_COUNT} shots, found {0}")]
    ShotCount(usize),
    #[error("template instruction must mention {0}")]
    MissingMention(&'static str),
    #[error("shot {index} has rating {rating} outside 1..=5")]
    ShotRating { index: usize, rating: i64 },
    #[error("template field {0} is empty")]
    Empty(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub task: String,
    pub rating: i64,
    pub motivation: String,
}

#[derive(Debug, Clone, Deserialize)]
struct RawTemplate {
    version: String,
    instruction: String,
    shots: Vec<Shot>,
    output_format_clause: String,
}

/// A validated prompt template. Construction (including deserialization)
/// fails unless it has exactly five shots and the instruction carries the
/// rating anchors and the three technology families.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate")]
pub struct PromptTemplate {
    version: String,
    instruction: String,
    shots: Vec<Shot>,
    output_format_clause: String,
}

impl TryFrom<RawTemplate> for PromptTemplate {
    type Error = TemplateError;

    fn try_from(raw: RawTemplate) -> Result<Self, Self::Error> {
        PromptTemplate::new(raw.version, raw.instruction, raw.shots, raw.output_format_clause)
    }
}

const REQUIRED_MENTIONS: [(&str, &[&str]); 5] = [
    ("the low anchor \"poor\"", &["poor"]),
    ("the high anchor \"excellent\"", &["excellent"]),
    ("language models", &["llm", "language model"]),
    ("image processing systems", &["image processing"]),
    ("robotics", &["robot"]),
];

impl PromptTemplate {
    pub fn new(
        version: impl Into<String>,
        instruction: impl Into<String>,
        shots: Vec<Shot>,
        output_format_clause: impl Into<String>,
    ) -> Result<Self, TemplateError> {
        let t = Self {
            version: version.into(),
            instruction: instruction.into(),
            shots,
            output_format_clause: output_format_clause.into(),
        };
        if t.version.trim().is_empty() {
            return Err(TemplateError::Empty("version"));
        }
        if t.output_format_clause.trim().is_empty() {
            return Err(TemplateError::Empty("output_format_clause"));
        }
        if t.shots.len() != SHOT_COUNT {
            return Err(TemplateError::ShotCount(t.shots.len()));
        }
        let lower = t.instruction.to_lowercase();
        for (what, needles) in REQUIRED_MENTIONS {
            if !needles.iter().any(|n| lower.contains(n)) {
                return Err(TemplateError::MissingMention(what));
            }
        }
        for (index, s) in t.shots.iter().enumerate() {
            if !(1..=5).contains(&s.rating) {
                return Err(TemplateError::ShotRating {
                    index,
                    rating: s.rating,
                });
            }
            if s.task.trim().is_empty() || s.motivation.trim().is_empty() {
                return Err(TemplateError::Empty("shot"));
            }
        }
        Ok(t)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn shots(&self) -> &[Shot] {
        &self.shots
    }

    /// Deterministic rendering: instruction, the five shots, the output
    /// format clause, then the target task.
    pub fn render(&self, task_description: &str) -> String {
        let mut out = String::new();
        out.push_str(self.instruction.trim());
        out.push_str("\n\nExamples:\n");
        for s in &self.shots {
            out.push_str("\nTask: ");
            out.push_str(s.task.trim());
            out.push_str("\nAnswer: ");
            out.push_str(&format_reply(s.rating, &s.motivation));
            out.push('\n');
        }
        out.push('\n');
        out.push_str(self.output_format_clause.trim());
        out.push_str("\n\nTask: ");
        out.push_str(task_description.trim());
        out.push_str("\nAnswer:");
        out
    }

    /// Built-in template, version `v1`. Five exemplars spanning the whole
    /// scale, written in the register of the motivations models return.
    pub fn default_v1() -> Self {
        let shots = vec![
            Shot {
                task: "Enter customer orders and account data into the billing system.".into(),
                rating: 5,
                motivation: "LLMs can read order documents and fill structured fields reliably, and Image Processing Systems can extract values from scanned forms. Robotics is not required. Together these technologies can carry out the whole task with high accuracy.".into(),
            },
            Shot {
                task: "Prepare monthly budget variance reports for department heads.".into(),
                rating: 4,
                motivation: "LLMs can compile figures, explain variances and draft the report text. Image Processing Systems help only when source documents are scanned. Robotics has no role. A human is still needed to judge unusual items, so performance is good rather than complete.".into(),
            },
            Shot {
                task: "Inspect delivered goods for damage and record discrepancies.".into(),
                rating: 3,
                motivation: "Image Processing Systems can detect visible damage and LLMs can log discrepancies in writing. Robotics could move items for inspection, but handling varied packaging is unreliable. The combination covers parts of the task with average results.".into(),
            },
            Shot {
                task: "Counsel clients about personal and family difficulties.".into(),
                rating: 2,
                motivation: "LLMs can suggest coping strategies and answer questions, but they cannot build trust or read emotional cues in person. Image Processing Systems add little, and Robotics offers no benefit. AI can support this task only in a limited way.".into(),
            },
            Shot {
                task: "Climb utility poles to repair damaged power lines during storms.".into(),
                rating: 1,
                motivation: "The task needs physical dexterity in dangerous, unstructured outdoor settings. Current Robotics cannot climb and repair lines safely, and LLMs and Image Processing Systems cannot perform the physical work. AI performance here is poor.".into(),
            },
        ];
        Self::new(
            "v1",
            "You are an expert in artificial intelligence and the labor market. \
Consider three families of AI technologies: LLMs (large language models) for understanding and producing text, \
Image Processing Systems for analysis and decision-making based on visual data, and Robotics for physical execution. \
For the job task below, rate how well an AI system combining these technologies could perform the task today, \
on a scale of 1 to 5 where 1 stands for poor and 5 stands for excellent, and explain your rating.",
            shots,
            "Return the result in a list format, with the rate as the first element and the motivation as the second element, \
for example: [3, \"motivation\"]. Do not use square brackets inside the motivation.",
        )
        .expect("built-in template is valid")
    }
}
