//! Run configuration: a TOML document whose relative paths resolve against
//! the directory holding it.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use teai_core::consensus::SimilarityVariant;
use teai_core::exposure_index::ValueSource;
use teai_core::labor_analytics::{RegressionSpec, TertileWeighting};
use teai_core::llm_gateway::{ModelSpec, PromptTemplate};

pub const TASK_STATEMENTS: &str = "Task Statements.txt";
pub const TASK_RATINGS: &str = "Task Ratings.txt";
pub const OCCUPATION_DATA: &str = "Occupation Data.txt";
pub const SKILLS: &str = "Skills.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub onet_dir: PathBuf,
    #[serde(default)]
    pub employment_file: Option<PathBuf>,
    /// Year assigned to employment rows when the file has no YEAR column.
    #[serde(default)]
    pub employment_year: Option<i32>,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub model_id: String,
    pub endpoint_url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub workers: usize,
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub requery_budget: u32,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            max_retries: 5,
            base_delay_ms: 1000,
            max_delay_ms: 60_000,
            requery_budget: 2,
            max_in_flight: 4,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusConfig {
    /// Replaces the scale width (max − min) in the consensus metric.
    pub width: Option<f64>,
    pub similarity: SimilarityVariant,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImputationConfig {
    pub override_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkillsConfig {
    pub class_map_file: Option<PathBuf>,
    pub value_source: ValueSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalIndex {
    pub name: String,
    pub file: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionTable {
    Occupations,
    Growth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    pub id: String,
    pub table: RegressionTable,
    pub dependent: String,
    pub regressors: Vec<String>,
    #[serde(default)]
    pub fixed_effects: Vec<String>,
    #[serde(default)]
    pub cluster: Option<String>,
    #[serde(default)]
    pub weights: Option<String>,
    /// Fit separately on each value of this column.
    #[serde(default)]
    pub split_by: Option<String>,
}

impl RegressionConfig {
    pub fn spec(&self) -> RegressionSpec {
        RegressionSpec {
            id: self.id.clone(),
            dependent: self.dependent.clone(),
            regressors: self.regressors.clone(),
            fixed_effects: self.fixed_effects.clone(),
            cluster: self.cluster.clone(),
            weights: self.weights.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticsConfig {
    pub tertile_weighting: TertileWeighting,
    pub skill_groups_file: Option<PathBuf>,
    /// Employment year joined to scores; defaults to the latest in the panel.
    pub employment_year: Option<i32>,
    pub growth_window: i32,
    pub external_indexes: Vec<ExternalIndex>,
    pub regressions: Vec<RegressionConfig>,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        Self {
            tertile_weighting: TertileWeighting::default(),
            skill_groups_file: None,
            employment_year: None,
            growth_window: 4,
            external_indexes: Vec::new(),
            regressions: default_regressions(),
        }
    }
}

fn regression(
    id: &str,
    table: RegressionTable,
    dependent: &str,
    regressors: &[&str],
    fe: &[&str],
    cluster: Option<&str>,
    split_by: Option<&str>,
) -> RegressionConfig {
    RegressionConfig {
        id: id.into(),
        table,
        dependent: dependent.into(),
        regressors: regressors.iter().map(|s| s.to_string()).collect(),
        fixed_effects: fe.iter().map(|s| s.to_string()).collect(),
        cluster: cluster.map(str::to_string),
        weights: None,
        split_by: split_by.map(str::to_string),
    }
}

/// Employment and wage growth on the exposure index per rolling window with
/// major-group and sector effects, plus exposure on skill relevance.
pub fn default_regressions() -> Vec<RegressionConfig> {
    use RegressionTable::{Growth, Occupations};
    vec![
        regression(
            "employment_growth",
            Growth,
            "dlog_emp",
            &["teai_norm", "log_emp0"],
            &["soc2", "sector"],
            Some("sector"),
            Some("window"),
        ),
        regression(
            "wage_growth",
            Growth,
            "dlog_wage",
            &["teai_norm", "log_emp0", "log_wage0", "log_wage0_sq"],
            &["soc2", "sector"],
            Some("sector"),
            Some("window"),
        ),
        regression(
            "skills",
            Occupations,
            "teai_norm",
            &[
                "sr_cognitive",
                "sr_social",
                "sr_problem_solving_management",
                "sr_technical",
            ],
            &[],
            None,
            None,
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_template_version")]
    pub template_version: String,
    /// JSON prompt template; the built-in template is used when absent.
    #[serde(default)]
    pub template_file: Option<PathBuf>,
    pub paths: Paths,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub embedding: Option<EmbeddingConfig>,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub consensus: ConsensusConfig,
    #[serde(default)]
    pub imputation: ImputationConfig,
    #[serde(default)]
    pub skills: SkillsConfig,
    #[serde(default)]
    pub analytics: AnalyticsConfig,
}

fn default_template_version() -> String {
    "v1".into()
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).context("invalid configuration")?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [&mut p.onet_dir, &mut p.cache_dir, &mut p.output_dir] {
            resolve(base, path);
        }
        let optional = [
            &mut p.employment_file,
            &mut self.template_file,
            &mut self.imputation.override_file,
            &mut self.skills.class_map_file,
            &mut self.analytics.skill_groups_file,
        ];
        for path in optional.into_iter().flatten() {
            resolve(base, path);
        }
        for e in &mut self.analytics.external_indexes {
            resolve(base, &mut e.file);
        }
    }

    pub fn task_statements(&self) -> PathBuf {
        self.paths.onet_dir.join(TASK_STATEMENTS)
    }

    pub fn task_ratings(&self) -> PathBuf {
        self.paths.onet_dir.join(TASK_RATINGS)
    }

    pub fn occupation_data(&self) -> PathBuf {
        self.paths.onet_dir.join(OCCUPATION_DATA)
    }

    pub fn skills_file(&self) -> PathBuf {
        self.paths.onet_dir.join(SKILLS)
    }

    /// Input files whose content feeds the outputs, labelled by role,
    /// present or not.
    pub fn input_files(&self) -> Vec<(String, PathBuf)> {
        let mut v = vec![
            ("task_statements".to_string(), self.task_statements()),
            ("task_ratings".to_string(), self.task_ratings()),
            ("occupation_data".to_string(), self.occupation_data()),
            ("skills".to_string(), self.skills_file()),
        ];
        let optional = [
            ("employment", &self.paths.employment_file),
            ("template", &self.template_file),
            ("overrides", &self.imputation.override_file),
            ("class_map", &self.skills.class_map_file),
            ("skill_groups", &self.analytics.skill_groups_file),
        ];
        for (label, p) in optional {
            if let Some(p) = p {
                v.push((label.to_string(), p.clone()));
            }
        }
        for e in &self.analytics.external_indexes {
            v.push((format!("external:{}", e.name), e.file.clone()));
        }
        v
    }

    pub fn template(&self) -> Result<PromptTemplate> {
        let t = match &self.template_file {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).with_context(|| format!("cannot read template {}", p.display()))?;
                serde_json::from_str::<PromptTemplate>(&text)
                    .with_context(|| format!("invalid template {}", p.display()))?
            }
            None => PromptTemplate::default_v1(),
        };
        ensure!(
            t.version() == self.template_version,
            "template_version is {:?} but the template declares {:?}",
            self.template_version,
            t.version()
        );
        Ok(t)
    }

    /// Structural checks plus existence of every referenced file.
    pub fn validate(&self, allow_partial_ensemble: bool) -> Result<()> {
        let n = self.models.len();
        if allow_partial_ensemble {
            ensure!(n >= 2, "at least 2 models are required, got {n}");
        } else {
            ensure!(
                n == 3,
                "exactly 3 models are required, got {n} (use --allow-partial-ensemble to run with fewer)"
            );
        }
        let mut ids: Vec<&str> = self.models.iter().map(|m| m.model_id.as_str()).collect();
        ids.sort();
        ids.dedup();
        ensure!(ids.len() == n, "model ids must be distinct");
        for m in &self.models {
            m.validate()?;
        }
        if let Some(e) = &self.embedding {
            ensure!(!e.model_id.trim().is_empty(), "embedding.model_id is empty");
            ensure!(
                e.endpoint_url.starts_with("http://") || e.endpoint_url.starts_with("https://"),
                "embedding.endpoint_url {:?} is not an http(s) URL",
                e.endpoint_url
            );
        }
        ensure!(self.scoring.workers >= 1, "scoring.workers must be at least 1");
        ensure!(
            self.scoring.max_in_flight >= 1,
            "scoring.max_in_flight must be at least 1"
        );
        if let Some(w) = self.consensus.width {
            ensure!(w.is_finite() && w > 0.0, "consensus.width must be positive");
        }
        ensure!(
            self.analytics.growth_window >= 1,
            "analytics.growth_window must be at least 1"
        );
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.analytics.regressions {
            ensure!(!r.id.is_empty(), "regression id is empty");
            ensure!(r.fixed_effects.len() <= 2, "{}: at most 2 fixed effects", r.id);
            ensure!(seen.insert(&r.id), "duplicate regression id {:?}", r.id);
        }
        ensure!(
            self.paths.onet_dir.is_dir(),
            "O*NET directory {} does not exist",
            self.paths.onet_dir.display()
        );
        for required in [self.task_statements(), self.task_ratings()] {
            if !required.is_file() {
                bail!("required O*NET file {} does not exist", required.display());
            }
        }
        let mut optional: Vec<&Path> = Vec::new();
        optional.extend(self.paths.employment_file.as_deref());
        optional.extend(self.template_file.as_deref());
        optional.extend(self.imputation.override_file.as_deref());
        optional.extend(self.skills.class_map_file.as_deref());
        optional.extend(self.analytics.skill_groups_file.as_deref());
        optional.extend(self.analytics.external_indexes.iter().map(|e| e.file.as_path()));
        for p in optional {
            ensure!(p.is_file(), "configured file {} does not exist", p.display());
        }
        self.template()?;
        Ok(())
    }

    /// The settings that determine output content. Locations of the cache
    /// and output directories are left out; input files are represented by
    /// their content hashes elsewhere.
    pub fn semantic_json(&self) -> serde_json::Value {
        serde_json::json!({
            "template_version": self.template_version,
            "models": self.models,
            "embedding": self.embedding.as_ref().map(|e| &e.model_id),
            "employment_year": self.paths.employment_year,
            "requery_budget": self.scoring.requery_budget,
            "consensus": self.consensus,
            "skills_value_source": self.skills.value_source,
            "analytics": {
                "tertile_weighting": self.analytics.tertile_weighting,
                "employment_year": self.analytics.employment_year,
                "growth_window": self.analytics.growth_window,
                "external_indexes": self.analytics.external_indexes.iter().map(|e| &e.name).collect::<Vec<_>>(),
                "regressions": self.analytics.regressions,
            },
        })
    }
}
