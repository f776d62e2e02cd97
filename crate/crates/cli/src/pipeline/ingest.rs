use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{anyhow, Context};
use teai_core::onet_ingest::{
    merge_tasks, parse_employment, parse_occupations, parse_skills, parse_task_ratings, parse_task_statements,
    parse_weight_overrides, write_employment_csv, write_occupations_csv, write_skills_csv, write_tasks_csv,
    ImputationPolicy, IngestError, Occupation, RatingIssue, SkillClassMap, WeightOverrides,
};

use super::{capped, Failure, OrRuntime, Pipeline, StageResult, Status};
use super::{EMPLOYMENT_CSV, OCCUPATIONS_CSV, SKILLS_CSV, TASKS_CSV};

const NOTE_LIMIT: usize = 50;

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(Failure::validation)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Parse failures of a whole file are input problems, reported with the path.
fn in_file<T>(path: &Path, r: Result<T, IngestError>) -> Result<T, Failure> {
    r.map_err(|e| Failure::validation(anyhow!("{}: {e}", path.display())))
}

impl Pipeline {
    pub fn ingest(&self) -> StageResult {
        self.stage("ingest", |counts| {
            let mut notes = Vec::new();
            let cfg = &self.cfg;

            let path = cfg.task_statements();
            let statements = in_file(&path, parse_task_statements(open(&path)?))?;
            if statements.records.is_empty() {
                return Err(Failure::validation(anyhow!("{}: no tasks", path.display())));
            }
            notes.push(format!(
                "task statements: {} tasks, {} occupations, {} rows rejected",
                statements.n_tasks(),
                statements.n_occupations(),
                statements.errors.len()
            ));
            notes.extend(capped(&statements.errors, NOTE_LIMIT, "  "));

            let path = cfg.task_ratings();
            let ratings = in_file(&path, parse_task_ratings(open(&path)?))?;
            let rating_issues: Vec<String> = ratings
                .errors
                .iter()
                .map(|e| match e {
                    RatingIssue::FrequencySum { task_id, sum } => {
                        format!("task {task_id}: frequency shares sum to {sum}")
                    }
                    RatingIssue::Row(r) => r.to_string(),
                })
                .chain(ratings.warnings.iter().map(|w| w.to_string()))
                .collect();
            notes.push(format!(
                "task ratings: {} tasks rated, {} issues",
                ratings.ratings.len(),
                rating_issues.len()
            ));
            notes.extend(capped(&rating_issues, NOTE_LIMIT, "  "));

            let overrides = match &cfg.imputation.override_file {
                Some(p) => in_file(p, parse_weight_overrides(open(p)?))?,
                None => WeightOverrides::default(),
            };
            let merged = merge_tasks(&statements.records, &ratings.ratings, &ImputationPolicy { overrides })
                .map_err(Failure::validation)?;
            notes.push(format!("weights imputed for {} tasks", merged.n_imputed()));
            notes.extend(capped(&merged.warnings, NOTE_LIMIT, "  "));
            let mut buf = Vec::new();
            write_tasks_csv(&mut buf, &merged.tasks).runtime()?;
            self.write(TASKS_CSV, &buf)?;

            let task_socs: BTreeSet<_> = merged.tasks.iter().map(|t| t.soc.clone()).collect();
            let occ_path = cfg.occupation_data();
            let mut occupations: Vec<Occupation> = if occ_path.is_file() {
                let (occs, issues) = in_file(&occ_path, parse_occupations(open(&occ_path)?))?;
                notes.extend(capped(&issues, NOTE_LIMIT, "  occupation data "));
                occs.into_iter().filter(|o| task_socs.contains(&o.soc)).collect()
            } else {
                notes.push(format!(
                    "{} not found; occupation titles left empty",
                    file_name(&occ_path)
                ));
                Vec::new()
            };
            let titled: BTreeSet<_> = occupations.iter().map(|o| o.soc.clone()).collect();
            occupations.extend(task_socs.iter().filter(|s| !titled.contains(*s)).map(|s| Occupation {
                soc: s.clone(),
                title: String::new(),
            }));
            occupations.sort_by(|a, b| a.soc.cmp(&b.soc));
            let mut buf = Vec::new();
            write_occupations_csv(&mut buf, &occupations).runtime()?;
            self.write(OCCUPATIONS_CSV, &buf)?;

            let skills_path = cfg.skills_file();
            if skills_path.is_file() {
                let class_map = match &cfg.skills.class_map_file {
                    Some(p) => in_file(p, SkillClassMap::parse(open(p)?))?,
                    None => SkillClassMap::default(),
                };
                let skills = in_file(&skills_path, parse_skills(open(&skills_path)?, &class_map))?;
                notes.push(format!(
                    "skills: {} records, {} issues",
                    skills.records.len(),
                    skills.warnings.len()
                ));
                notes.extend(capped(&skills.warnings, NOTE_LIMIT, "  "));
                let mut buf = Vec::new();
                write_skills_csv(&mut buf, &skills.records).runtime()?;
                self.write(SKILLS_CSV, &buf)?;
            } else {
                let _ = std::fs::remove_file(self.out(SKILLS_CSV));
                notes.push(format!(
                    "{} not found; skill relevance skipped",
                    file_name(&skills_path)
                ));
            }

            if let Some(p) = &cfg.paths.employment_file {
                let default_year = cfg.paths.employment_year.unwrap_or(0);
                let emp = in_file(p, parse_employment(open(p)?, default_year))?;
                if emp.records.iter().any(|r| r.year == 0) {
                    return Err(Failure::validation(anyhow!(
                        "{}: no YEAR column; set paths.employment_year",
                        p.display()
                    )));
                }
                let years: BTreeSet<i32> = emp.records.iter().map(|r| r.year).collect();
                notes.push(format!(
                    "employment: {} records over {} year(s), {} rows skipped",
                    emp.records.len(),
                    years.len(),
                    emp.warnings.len()
                ));
                notes.extend(capped(&emp.warnings, NOTE_LIMIT, "  "));
                let mut buf = Vec::new();
                write_employment_csv(&mut buf, &emp.records).runtime()?;
                self.write(EMPLOYMENT_CSV, &buf)?;
            } else {
                let _ = std::fs::remove_file(self.out(EMPLOYMENT_CSV));
                notes.push("no employment file configured".into());
            }

            counts.tasks_parsed = Some(merged.tasks.len());
            counts.occupations_parsed = Some(task_socs.len());
            counts.tasks_imputed = Some(merged.n_imputed());
            self.write_notes("ingest", &notes)?;
            Ok(Status::Complete)
        })
    }
}
