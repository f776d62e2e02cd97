use std::collections::BTreeMap;
use std::fs::File;

use anyhow::anyhow;
use teai_core::exposure_index::{
    score_occupations, skill_relevance_table, write_occupation_scores, write_skill_relevance,
};
use teai_core::onet_ingest::{read_occupations_csv, read_skills_csv, read_tasks_csv};

use super::records::{read_assessments, AssessmentStatus};
use super::{capped, Failure, OrRuntime, Pipeline, StageResult, Status};
use super::{ASSESSMENTS, OCCUPATIONS_CSV, SCORES_CSV, SKILLS_CSV, SKILL_RELEVANCE_CSV, TASKS_CSV};

impl Pipeline {
    pub fn index(&self) -> StageResult {
        self.stage("index", |counts| {
            let tasks_path = self.require_output(TASKS_CSV, "ingest")?;
            let tasks = read_tasks_csv(File::open(&tasks_path).runtime()?).map_err(Failure::validation)?;
            let assess_path = self.out(ASSESSMENTS);
            if !assess_path.is_file() {
                return Err(Failure::validation(anyhow!(
                    "{} not found; run `teai score` first",
                    assess_path.display()
                )));
            }
            let assessments = read_assessments(&assess_path).map_err(Failure::validation)?;
            if assessments.iter().any(|a| a.manifest_hash != self.manifest_hash) {
                tracing::warn!("{ASSESSMENTS} was produced under a different configuration; rerun `teai score`");
            }
            let te: BTreeMap<u64, i64> = assessments
                .iter()
                .filter(|a| a.status == AssessmentStatus::Scored)
                .filter_map(|a| a.te.map(|t| (a.task_id, t)))
                .collect();

            let occ_path = self.out(OCCUPATIONS_CSV);
            let titles: BTreeMap<_, _> = if occ_path.is_file() {
                read_occupations_csv(File::open(&occ_path).runtime()?)
                    .map_err(Failure::validation)?
                    .into_iter()
                    .map(|o| (o.soc, o.title))
                    .collect()
            } else {
                BTreeMap::new()
            };

            let outcome = score_occupations(&tasks, &te, &titles).map_err(Failure::runtime)?;
            let mut buf = Vec::new();
            write_occupation_scores(&mut buf, &outcome.scores).runtime()?;
            self.write(SCORES_CSV, &buf)?;

            let mut notes = vec![
                format!("occupations scored: {}", outcome.scores.len()),
                format!("occupations without a score: {}", outcome.missing.len()),
            ];
            let missing: Vec<String> = outcome
                .missing
                .iter()
                .map(|m| format!("{}: {}", m.soc, m.reason))
                .collect();
            notes.extend(capped(&missing, 50, "  "));
            if outcome.degenerate {
                notes.push("all occupations share one raw score; normalized scores set to 0.5".into());
            }

            let skills_path = self.out(SKILLS_CSV);
            if skills_path.is_file() {
                let skills = read_skills_csv(File::open(&skills_path).runtime()?).map_err(Failure::validation)?;
                let rows = skill_relevance_table(&skills, self.cfg.skills.value_source);
                notes.push(format!("skill relevance rows: {}", rows.len()));
                let mut buf = Vec::new();
                write_skill_relevance(&mut buf, &rows).runtime()?;
                self.write(SKILL_RELEVANCE_CSV, &buf)?;
            } else {
                let _ = std::fs::remove_file(self.out(SKILL_RELEVANCE_CSV));
                notes.push("no skills table; skill relevance skipped".into());
            }

            counts.occupations_scored = Some(outcome.scores.len());
            counts.occupations_missing = Some(outcome.missing.len());
            self.write_notes("index", &notes)?;
            Ok(Status::Complete)
        })
    }
}
