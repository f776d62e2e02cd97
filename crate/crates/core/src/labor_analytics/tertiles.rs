use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::onet_ingest::{read_text, two_column, EmploymentRecord, SocCode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TertileError {
    #[error("need at least 3 distinct scores, got {0}")]
    TooFewDistinct(usize),
    #[error("weighted cutpoints need employment for at least 3 occupations")]
    NoWeights,
    #[error("skill group file line {line}: {message}")]
    GroupFile { line: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tertile {
    Low,
    Medium,
    High,
}

impl Tertile {
    pub const ALL: [Tertile; 3] = [Tertile::Low, Tertile::Medium, Tertile::High];

    pub fn as_str(&self) -> &'static str {
        match self {
            Tertile::Low => "Low",
            Tertile::Medium => "Medium",
            Tertile::High => "High",
        }
    }
}

/// How cutpoints are placed on the score distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TertileWeighting {
    /// Quantiles of the occupation-level scores.
    #[default]
    Occupation,
    /// Quantiles of the employment-weighted score distribution.
    Employment,
}

/// Linear-interpolation quantile of sorted data (the `(n-1)p` rule).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Smallest score whose cumulative weight share reaches `p`.
pub fn weighted_quantile(pairs: &[(f64, f64)], p: f64) -> f64 {
    let mut v = pairs.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = v.iter().map(|x| x.1).sum();
    let mut acc = 0.0;
    for (s, w) in &v {
        acc += w;
        if acc / total >= p - 1e-12 {
            return *s;
        }
    }
    v.last().map(|x| x.0).unwrap_or(f64::NAN)
}

pub fn assign(score: f64, cut: [f64; 2]) -> Tertile {
    if score <= cut[0] {
        Tertile::Low
    } else if score <= cut[1] {
        Tertile::Medium
    } else {
        Tertile::High
    }
}

/// Occupation to skill-intensity group. Lookups try the full code, then the
/// 6-digit base, then the major group, then the built-in major-group rule.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkillGroups {
    explicit: BTreeMap<String, String>,
}

impl SkillGroups {
    pub fn default_group(major: &str) -> &'static str {
        match major {
            "11" | "13" | "15" | "17" | "19" | "21" | "23" | "25" | "27" | "29" => "high",
            "35" | "37" | "39" | "45" => "low",
            _ => "medium",
        }
    }

    /// Two-column file of `soc,group`; the code may be a full O*NET code, a
    /// 7-character SOC code or a 2-digit major group.
    pub fn parse<R: Read>(reader: R) -> Result<Self, TertileError> {
        let text = read_text(reader).map_err(|e| TertileError::GroupFile {
            line: 0,
            message: e.to_string(),
        })?;
        let mut explicit = BTreeMap::new();
        for (line, key, group) in two_column(&text) {
            let key = key.trim();
            if key.eq_ignore_ascii_case("soc") {
                continue;
            }
            let norm = if key.len() == 2 && key.chars().all(|c| c.is_ascii_digit()) {
                key.to_string()
            } else {
                SocCode::normalize(key)
                    .map_err(|e| TertileError::GroupFile {
                        line,
                        message: e.to_string(),
                    })?
                    .to_string()
            };
            let group = group.trim();
            if group.is_empty() {
                return Err(TertileError::GroupFile {
                    line,
                    message: "empty group".into(),
                });
            }
            explicit.insert(norm, group.to_string());
        }
        Ok(Self { explicit })
    }

    pub fn group(&self, soc: &SocCode) -> String {
        [
            soc.as_str().to_string(),
            soc.base().to_string(),
            soc.major_group().to_string(),
        ]
        .iter()
        .find_map(|k| self.explicit.get(k).cloned())
        .unwrap_or_else(|| Self::default_group(soc.major_group()).to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupShare {
    pub occupations: usize,
    pub employment: Option<f64>,
    /// Share of the tertile's employment falling in this group.
    pub share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TertileSummary {
    pub tertile: Tertile,
    pub occupation_count: usize,
    pub employment_total: Option<f64>,
    pub employment_share: Option<f64>,
    pub lower: f64,
    pub upper: f64,
    pub by_major_group: BTreeMap<String, GroupShare>,
    pub by_skill_group: BTreeMap<String, GroupShare>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TertileReport {
    pub cutpoints: [f64; 2],
    pub weighting: TertileWeighting,
    pub tiers: Vec<TertileSummary>,
    pub assignments: Vec<(SocCode, Tertile)>,
    /// Scored occupations without employment data.
    pub unmatched: Vec<SocCode>,
}

impl TertileReport {
    pub fn has_shares(&self) -> bool {
        self.tiers.iter().any(|t| t.employment_share.is_some())
    }
}

pub fn classify_tertiles(
    scores: &[(SocCode, f64)],
    employment: &BTreeMap<SocCode, f64>,
    groups: &SkillGroups,
    weighting: TertileWeighting,
) -> Result<TertileReport, TertileError> {
    let distinct: BTreeSet<u64> = scores.iter().map(|(_, s)| s.to_bits()).collect();
    if distinct.len() < 3 {
        return Err(TertileError::TooFewDistinct(distinct.len()));
    }
    let cutpoints = match weighting {
        TertileWeighting::Occupation => {
            let mut sorted: Vec<f64> = scores.iter().map(|(_, s)| *s).collect();
            sorted.sort_by(f64::total_cmp);
            [quantile_sorted(&sorted, 1.0 / 3.0), quantile_sorted(&sorted, 2.0 / 3.0)]
        }
        TertileWeighting::Employment => {
            let pairs: Vec<(f64, f64)> = scores
                .iter()
                .filter_map(|(soc, s)| employment.get(soc).filter(|e| **e > 0.0).map(|e| (*s, *e)))
                .collect();
            if pairs.len() < 3 {
                return Err(TertileError::NoWeights);
            }
            [
                weighted_quantile(&pairs, 1.0 / 3.0),
                weighted_quantile(&pairs, 2.0 / 3.0),
            ]
        }
    };

    let assignments: Vec<(SocCode, Tertile)> = scores
        .iter()
        .map(|(soc, s)| (soc.clone(), assign(*s, cutpoints)))
        .collect();
    let unmatched: Vec<SocCode> = scores
        .iter()
        .filter(|(soc, _)| !employment.contains_key(soc))
        .map(|(soc, _)| soc.clone())
        .collect();
    let matched_total: f64 = scores
        .iter()
        .filter_map(|(soc, _)| employment.get(soc))
        .fold(0.0, |a, b| a + b);
    let has_emp = matched_total > 0.0;

    let lo_score = scores.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
    let hi_score = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let bounds = [
        (lo_score, cutpoints[0]),
        (cutpoints[0], cutpoints[1]),
        (cutpoints[1], hi_score),
    ];

    let mut tiers = Vec::new();
    for (t, (lower, upper)) in Tertile::ALL.into_iter().zip(bounds) {
        let members: Vec<&SocCode> = assignments.iter().filter(|(_, a)| *a == t).map(|(s, _)| s).collect();
        let emp_total: f64 = members
            .iter()
            .filter_map(|s| employment.get(*s))
            .fold(0.0, |a, b| a + b);
        let breakdown = |key: &dyn Fn(&SocCode) -> String| {
            let mut m: BTreeMap<String, (usize, f64)> = BTreeMap::new();
            for s in &members {
                let e = m.entry(key(s)).or_default();
                e.0 += 1;
                e.1 += employment.get(*s).copied().unwrap_or(0.0);
            }
            m.into_iter()
                .map(|(k, (n, e))| {
                    (
                        k,
                        GroupShare {
                            occupations: n,
                            employment: has_emp.then_some(e),
                            share: (has_emp && emp_total > 0.0).then(|| e / emp_total),
                        },
                    )
                })
                .collect()
        };
        tiers.push(TertileSummary {
            tertile: t,
            occupation_count: members.len(),
            employment_total: has_emp.then_some(emp_total),
            employment_share: has_emp.then(|| emp_total / matched_total),
            lower,
            upper,
            by_major_group: breakdown(&|s| s.major_group().to_string()),
            by_skill_group: breakdown(&|s| groups.group(s)),
        });
    }
    Ok(TertileReport {
        cutpoints,
        weighting,
        tiers,
        assignments,
        unmatched,
    })
}

/// Employment per scored occupation for one year. Records are summed per
/// 6-digit SOC across sectors; a detailed O*NET code present in the records
/// takes its own total, otherwise the base total is split evenly among the
/// scored codes sharing that base.
pub fn join_employment(scored: &[SocCode], records: &[EmploymentRecord], year: i32) -> BTreeMap<SocCode, f64> {
    let mut exact: BTreeMap<&SocCode, f64> = BTreeMap::new();
    let mut base: BTreeMap<SocCode, f64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.year == year) {
        *exact.entry(&r.soc).or_default() += r.employment;
        *base.entry(r.soc.base()).or_default() += r.employment;
    }
    let mut sharing: BTreeMap<SocCode, usize> = BTreeMap::new();
    for s in scored {
        if !exact.contains_key(s) || s.base() == *s {
            *sharing.entry(s.base()).or_default() += 1;
        }
    }
    let mut out = BTreeMap::new();
    for s in scored {
        if s.base() != *s {
            if let Some(e) = exact.get(s) {
                out.insert(s.clone(), *e);
                continue;
            }
        }
        if let (Some(total), Some(n)) = (base.get(&s.base()), sharing.get(&s.base())) {
            out.insert(s.clone(), total / *n as f64);
        }
    }
    out
}

pub const TERTILES_HEADER: [&str; 9] = [
    "tertile",
    "breakdown",
    "group",
    "occupations",
    "employment",
    "share",
    "lower",
    "upper",
    "weighting",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One `all` row per tertile followed by its major-group and skill-group
/// breakdown rows. Shares in `all` rows are of total employment; breakdown
/// shares are within the tertile.
pub fn write_tertiles<W: Write>(writer: W, report: &TertileReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TERTILES_HEADER)?;
    let weighting = match report.weighting {
        TertileWeighting::Occupation => "occupation",
        TertileWeighting::Employment => "employment",
    };
    for t in &report.tiers {
        let (lo, hi) = (t.lower.to_string(), t.upper.to_string());
        w.write_record([
            t.tertile.as_str(),
            "all",
            "",
            &t.occupation_count.to_string(),
            &opt(t.employment_total),
            &opt(t.employment_share),
            &lo,
            &hi,
            weighting,
        ])?;
        for (kind, m) in [("soc_major", &t.by_major_group), ("skill_group", &t.by_skill_group)] {
            for (g, s) in m {
                w.write_record([
                    t.tertile.as_str(),
                    kind,
                    g,
                    &s.occupations.to_string(),
                    &opt(s.employment),
                    &opt(s.share),
                    &lo,
                    &hi,
                    weighting,
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
