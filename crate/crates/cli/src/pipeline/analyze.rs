use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};
use teai_core::exposure_index::{read_occupation_scores, read_skill_relevance, OccupationScore, SkillRelevance};
use teai_core::labor_analytics::{
    classify_tertiles, correlate, growth_data_table, growth_table, join_employment, ols_fit, pair_by_key,
    write_correlations, write_regressions, write_tertiles, CorrelationMethod, CorrelationRow, DataTable,
    RegressionResult, SkillGroups, TertileReport,
};
use teai_core::onet_ingest::{read_employment_csv, read_text, two_column, EmploymentRecord, SkillClass, SocCode};

use super::records::{read_assessments, AssessmentStatus};
use super::{Failure, OrRuntime, Pipeline, StageResult, Status};
use super::{ASSESSMENTS, CORRELATIONS_CSV, EMPLOYMENT_CSV, REGRESSIONS_CSV, REPORT, SCORES_CSV};
use super::{SKILL_RELEVANCE_CSV, TERTILES_CSV};
use crate::config::RegressionTable;
use crate::manifest::{stamp_line, SOFTWARE_VERSION};

const METHODS: [CorrelationMethod; 2] = [CorrelationMethod::Pearson, CorrelationMethod::Spearman];
const SKILL_CLASSES: [SkillClass; 4] = [
    SkillClass::Cognitive,
    SkillClass::Social,
    SkillClass::ProblemSolvingManagement,
    SkillClass::Technical,
];

/// Value for `soc` from a map keyed by SOC code: the exact code, else the
/// mean over entries sharing its 6-digit base.
fn lookup_by_soc(map: &BTreeMap<SocCode, f64>, soc: &SocCode) -> Option<f64> {
    if let Some(v) = map.get(soc) {
        return Some(*v);
    }
    let base = soc.base();
    let vals: Vec<f64> = map.iter().filter(|(k, _)| k.base() == base).map(|(_, v)| *v).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Reads a two-column `soc,value` file. Unparseable rows are skipped.
fn read_external(path: &Path) -> Result<(BTreeMap<SocCode, f64>, usize)> {
    let text = read_text(File::open(path).with_context(|| format!("cannot open {}", path.display()))?)?;
    let mut out = BTreeMap::new();
    let mut skipped = 0;
    for (_, k, v) in two_column(&text) {
        match (SocCode::normalize(&k), v.parse::<f64>()) {
            (Ok(soc), Ok(val)) if val.is_finite() => {
                out.insert(soc, val);
            }
            _ if k.eq_ignore_ascii_case("soc") => {}
            _ => skipped += 1,
        }
    }
    Ok((out, skipped))
}

fn run_pair(a: &str, b: &str, xa: &[f64], xb: &[f64], rows: &mut Vec<CorrelationRow>, errors: &mut Vec<String>) {
    for m in METHODS {
        match correlate(xa, xb, m) {
            Ok(result) => rows.push(CorrelationRow {
                series_a: a.to_string(),
                series_b: b.to_string(),
                method: m,
                result,
            }),
            Err(e) => errors.push(format!("correlation {a}~{b} ({}): {e}", m.as_str())),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

struct Inputs {
    scores: Vec<OccupationScore>,
    employment: Option<Vec<EmploymentRecord>>,
    skill_relevance: Option<Vec<SkillRelevance>>,
}

impl Pipeline {
    pub fn analyze(&self) -> StageResult {
        self.stage("analyze", |counts| {
            let path = self.require_output(SCORES_CSV, "index")?;
            let scores = read_occupation_scores(File::open(&path).runtime()?).map_err(Failure::validation)?;
            let emp_path = self.out(EMPLOYMENT_CSV);
            let employment = if emp_path.is_file() {
                self.check_stamp(&emp_path);
                Some(read_employment_csv(File::open(&emp_path).runtime()?).map_err(Failure::validation)?)
            } else {
                None
            };
            let sr_path = self.out(SKILL_RELEVANCE_CSV);
            let skill_relevance = if sr_path.is_file() {
                Some(read_skill_relevance(File::open(&sr_path).runtime()?).map_err(Failure::validation)?)
            } else {
                None
            };
            let groups = match &self.cfg.analytics.skill_groups_file {
                Some(p) => SkillGroups::parse(File::open(p).runtime()?).map_err(Failure::validation)?,
                None => SkillGroups::default(),
            };
            let inputs = Inputs {
                scores,
                employment,
                skill_relevance,
            };

            let mut errors: Vec<String> = Vec::new();
            let mut lines: Vec<String> = Vec::new();

            self.tertiles(&inputs, &groups, &mut lines, &mut errors)?;
            self.correlations(&inputs, &mut lines, &mut errors)?;
            self.regressions(&inputs, &mut lines, &mut errors)?;

            if !errors.is_empty() {
                lines.push(format!("errors ({}):", errors.len()));
                lines.extend(errors.iter().map(|e| format!("  {e}")));
            }
            self.write_notes("analyze", &lines)?;
            self.write_report()?;
            counts.analyses_failed = Some(errors.len());
            Ok(if errors.is_empty() {
                Status::Complete
            } else {
                Status::Partial
            })
        })
    }

    fn tertiles(
        &self,
        inputs: &Inputs,
        groups: &SkillGroups,
        lines: &mut Vec<String>,
        errors: &mut Vec<String>,
    ) -> Result<(), Failure> {
        let scored: Vec<(SocCode, f64)> = inputs.scores.iter().map(|s| (s.soc.clone(), s.teai_raw)).collect();
        let socs: Vec<SocCode> = scored.iter().map(|s| s.0.clone()).collect();
        let emp = match &inputs.employment {
            Some(records) if !records.is_empty() => {
                let year = self
                    .cfg
                    .analytics
                    .employment_year
                    .unwrap_or_else(|| records.iter().map(|r| r.year).max().unwrap_or(0));
                lines.push(format!("employment year joined: {year}"));
                join_employment(&socs, records, year)
            }
            _ => BTreeMap::new(),
        };
        match classify_tertiles(&scored, &emp, groups, self.cfg.analytics.tertile_weighting) {
            Ok(report) => {
                let mut buf = Vec::new();
                write_tertiles(&mut buf, &report).runtime()?;
                self.write(TERTILES_CSV, &buf)?;
                summarize_tertiles(&report, lines);
            }
            Err(e) => {
                let _ = std::fs::remove_file(self.out(TERTILES_CSV));
                errors.push(format!("tertiles: {e}"));
            }
        }
        Ok(())
    }

    fn correlations(&self, inputs: &Inputs, lines: &mut Vec<String>, errors: &mut Vec<String>) -> Result<(), Failure> {
        let teai: BTreeMap<SocCode, f64> = inputs.scores.iter().map(|s| (s.soc.clone(), s.teai_raw)).collect();
        let mut rows = Vec::new();

        for ext in &self.cfg.analytics.external_indexes {
            match read_external(&ext.file) {
                Ok((values, skipped)) => {
                    if skipped > 0 {
                        lines.push(format!("external index {}: {skipped} row(s) skipped", ext.name));
                    }
                    let (xa, xb): (Vec<f64>, Vec<f64>) = teai
                        .iter()
                        .filter_map(|(soc, t)| lookup_by_soc(&values, soc).map(|v| (*t, v)))
                        .unzip();
                    run_pair("teai_raw", &ext.name, &xa, &xb, &mut rows, errors);
                }
                Err(e) => errors.push(format!("external index {}: {e:#}", ext.name)),
            }
        }
        if let Some(sr) = &inputs.skill_relevance {
            for class in SKILL_CLASSES {
                let m: BTreeMap<SocCode, f64> = sr
                    .iter()
                    .filter(|r| r.class == class)
                    .map(|r| (r.soc.clone(), r.sr))
                    .collect();
                let (_, xa, xb) = pair_by_key(&teai, &m);
                run_pair(
                    "teai_raw",
                    &format!("sr_{}", class.as_str()),
                    &xa,
                    &xb,
                    &mut rows,
                    errors,
                );
            }
        }
        let assess_path = self.out(ASSESSMENTS);
        if assess_path.is_file() {
            let recs = read_assessments(&assess_path).runtime()?;
            let (xa, xb): (Vec<f64>, Vec<f64>) = recs
                .iter()
                .filter(|r| r.status == AssessmentStatus::Scored)
                .filter_map(|r| Some((r.consensus?, r.similarity?)))
                .unzip();
            if !xa.is_empty() {
                run_pair("task_consensus", "task_similarity", &xa, &xb, &mut rows, errors);
            }
        }

        let mut buf = Vec::new();
        write_correlations(&mut buf, &rows).runtime()?;
        self.write(CORRELATIONS_CSV, &buf)?;
        lines.push(format!("correlations: {}", rows.len()));
        for r in &rows {
            lines.push(format!(
                "  {} ~ {} ({}): r={:.4} p={:.4} n={}",
                r.series_a,
                r.series_b,
                r.method.as_str(),
                r.result.coefficient,
                r.result.p_value,
                r.result.n
            ));
        }
        Ok(())
    }

    fn regressions(&self, inputs: &Inputs, lines: &mut Vec<String>, errors: &mut Vec<String>) -> Result<(), Failure> {
        let occ_table = occupation_table(inputs);
        let growth = match &inputs.employment {
            Some(records) => {
                let g = growth_table(records, self.cfg.analytics.growth_window);
                lines.extend(g.warnings.iter().map(|w| format!("growth table: {w}")));
                lines.push(format!(
                    "growth table: {} rows over {} window(s)",
                    g.rows.len(),
                    g.windows.len()
                ));
                let mut t = growth_data_table(&g.rows);
                attach_scores(
                    &mut t,
                    &g.rows.iter().map(|r| r.soc.clone()).collect::<Vec<_>>(),
                    &inputs.scores,
                );
                Some(t)
            }
            None => None,
        };

        let mut results: Vec<(String, RegressionResult)> = Vec::new();
        for rc in &self.cfg.analytics.regressions {
            let table = match rc.table {
                RegressionTable::Occupations => &occ_table,
                RegressionTable::Growth => match &growth {
                    Some(t) => t,
                    None => {
                        errors.push(format!("regression {}: no employment panel", rc.id));
                        continue;
                    }
                },
            };
            let parts = match &rc.split_by {
                Some(col) => match table.split_by(col) {
                    Some(p) => p,
                    None => {
                        errors.push(format!("regression {}: unknown split column '{col}'", rc.id));
                        continue;
                    }
                },
                None => vec![(String::new(), table.clone())],
            };
            if parts.is_empty() {
                errors.push(format!("regression {}: no observations", rc.id));
            }
            let spec = rc.spec();
            for (group, part) in parts {
                match ols_fit(&part, &spec) {
                    Ok(r) => results.push((group, r)),
                    Err(e) if group.is_empty() => errors.push(format!("regression {}: {e}", rc.id)),
                    Err(e) => errors.push(format!("regression {} [{group}]: {e}", rc.id)),
                }
            }
        }

        let mut buf = Vec::new();
        write_regressions(&mut buf, &results).runtime()?;
        self.write(REGRESSIONS_CSV, &buf)?;
        lines.push(format!("regressions fitted: {}", results.len()));
        for (group, r) in &results {
            let label = if group.is_empty() {
                r.spec_id.clone()
            } else {
                format!("{} [{group}]", r.spec_id)
            };
            let terms: Vec<String> = r
                .coefficients
                .iter()
                .map(|c| {
                    format!(
                        "{}={:.4} (se {:.4}, cluster {})",
                        c.term,
                        c.estimate,
                        c.se,
                        fmt_opt(c.se_cluster)
                    )
                })
                .collect();
            lines.push(format!(
                "  {label}: n={} r2={:.4} {}",
                r.n_observations,
                r.r_squared,
                terms.join("; ")
            ));
        }
        Ok(())
    }

    /// Collects the stage notes into `report.txt`.
    fn write_report(&self) -> Result<(), Failure> {
        let mut out = String::new();
        out.push_str("teai run report\n");
        out.push_str(&format!("manifest {}\n", self.manifest_hash));
        out.push_str(&format!(
            "software {SOFTWARE_VERSION}; template {}; models {}\n",
            self.template.version(),
            self.cfg
                .models
                .iter()
                .map(|m| m.model_id.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        ));
        match self.opts.mock_seed() {
            Some(seed) => out.push_str(&format!("transport: mock (seed {seed})\n")),
            None => out.push_str("transport: live\n"),
        }
        for stage in ["ingest", "score", "index", "analyze"] {
            out.push_str(&format!("\n[{stage}]\n"));
            out.push_str(&self.read_notes(stage).unwrap_or_else(|| "(not run)\n".into()));
        }
        let body = out.into_bytes();
        let mut bytes = stamp_line(&self.manifest_hash).into_bytes();
        bytes.extend_from_slice(&body);
        teai_core::llm_gateway::write_atomic(&self.out(REPORT), &bytes)
            .context("cannot write report")
            .runtime()
    }
}

fn summarize_tertiles(report: &TertileReport, lines: &mut Vec<String>) {
    lines.push(format!(
        "tertile cutpoints: {:.4}, {:.4}",
        report.cutpoints[0], report.cutpoints[1]
    ));
    for t in &report.tiers {
        lines.push(format!(
            "  {}: {} occupation(s), employment {}, share {}",
            t.tertile.as_str(),
            t.occupation_count,
            fmt_opt(t.employment_total),
            fmt_opt(t.employment_share)
        ));
    }
    if !report.has_shares() {
        lines.push("  no employment joined; counts only".into());
    } else if !report.unmatched.is_empty() {
        lines.push(format!("  {} occupation(s) without employment", report.unmatched.len()));
    }
}

/// Occupation-level regression table: scores, skill relevance per class,
/// SOC group codes and latest-year employment.
fn occupation_table(inputs: &Inputs) -> DataTable {
    let n = inputs.scores.len();
    let mut t = DataTable::new(n);
    let s = &inputs.scores;
    t.add_categorical("soc", s.iter().map(|o| Some(o.soc.to_string())).collect());
    for d in 2..=5 {
        t.add_categorical(
            format!("soc{d}"),
            s.iter().map(|o| Some(o.soc.group(d).to_string())).collect(),
        );
    }
    t.add_complete("teai_raw", s.iter().map(|o| o.teai_raw).collect());
    t.add_complete("teai_norm", s.iter().map(|o| o.teai_norm).collect());
    t.add_complete("teai_percentile", s.iter().map(|o| o.teai_percentile).collect());
    if let Some(sr) = &inputs.skill_relevance {
        for class in SKILL_CLASSES {
            let m: BTreeMap<&SocCode, f64> = sr.iter().filter(|r| r.class == class).map(|r| (&r.soc, r.sr)).collect();
            t.add_numeric(
                format!("sr_{}", class.as_str()),
                s.iter().map(|o| m.get(&o.soc).copied()).collect(),
            );
        }
    }
    if let Some(records) = &inputs.employment {
        if let Some(year) = records.iter().map(|r| r.year).max() {
            let socs: Vec<SocCode> = s.iter().map(|o| o.soc.clone()).collect();
            let emp = join_employment(&socs, records, year);
            let col: Vec<Option<f64>> = socs.iter().map(|c| emp.get(c).copied()).collect();
            t.add_numeric(
                "log_employment",
                col.iter().map(|v| v.filter(|x| *x > 0.0).map(f64::ln)).collect(),
            );
            t.add_numeric("employment", col);
        }
    }
    t
}

/// Adds the exposure columns to a table keyed by `socs`.
fn attach_scores(t: &mut DataTable, socs: &[SocCode], scores: &[OccupationScore]) {
    let pick = |f: fn(&OccupationScore) -> f64| -> Vec<Option<f64>> {
        let m: BTreeMap<SocCode, f64> = scores.iter().map(|s| (s.soc.clone(), f(s))).collect();
        socs.iter().map(|s| lookup_by_soc(&m, s)).collect()
    };
    t.add_numeric("teai_raw", pick(|s| s.teai_raw));
    t.add_numeric("teai_norm", pick(|s| s.teai_norm));
    t.add_numeric("teai_percentile", pick(|s| s.teai_percentile));
}
