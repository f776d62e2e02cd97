use std::collections::BTreeMap;

use serde::Serialize;

use crate::onet_ingest::{EmploymentRecord, SocCode};

use super::table::DataTable;

/// Sector label used when a record carries none.
pub const ALL_SECTORS: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthRow {
    pub soc: SocCode,
    pub sector: String,
    pub window_start: i32,
    pub window_end: i32,
    pub dlog_emp: f64,
    pub dlog_wage: Option<f64>,
    pub log_emp0: f64,
    pub log_wage0: Option<f64>,
    pub log_wage0_sq: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GrowthOutcome {
    pub rows: Vec<GrowthRow>,
    pub windows: Vec<(i32, i32)>,
    /// (soc, sector, window) cells skipped for a missing or nonpositive
    /// employment endpoint.
    pub dropped: usize,
    /// Rows kept whose wage change is missing for the same reason.
    pub wage_missing: usize,
    pub warnings: Vec<String>,
}

/// Every `[t, t+w]` with both ends inside `[first, last]`.
pub fn rolling_windows(first: i32, last: i32, w: i32) -> Vec<(i32, i32)> {
    if w <= 0 {
        return Vec::new();
    }
    (first..=last - w).map(|t| (t, t + w)).collect()
}

#[derive(Default, Clone, Copy)]
struct Cell {
    emp: f64,
    wage_num: f64,
    wage_den: f64,
}

impl Cell {
    fn wage(&self) -> Option<f64> {
        (self.wage_den > 0.0).then(|| self.wage_num / self.wage_den)
    }
}

fn ln_pos(x: f64) -> Option<f64> {
    (x > 0.0 && x.is_finite()).then(|| x.ln())
}

/// Log changes of employment and wage per (occupation, sector, window).
/// Duplicate records in a cell are pooled: employment summed, wage
/// employment-weighted.
pub fn growth_table(panel: &[EmploymentRecord], window_years: i32) -> GrowthOutcome {
    let mut cells: BTreeMap<(SocCode, String), BTreeMap<i32, Cell>> = BTreeMap::new();
    for r in panel {
        let sector = r.sector.clone().unwrap_or_else(|| ALL_SECTORS.to_string());
        let c = cells
            .entry((r.soc.clone(), sector))
            .or_default()
            .entry(r.year)
            .or_default();
        c.emp += r.employment;
        if let Some(w) = r.wage {
            c.wage_num += w * r.employment.max(f64::MIN_POSITIVE);
            c.wage_den += r.employment.max(f64::MIN_POSITIVE);
        }
    }
    let mut out = GrowthOutcome::default();
    let (Some(first), Some(last)) = (panel.iter().map(|r| r.year).min(), panel.iter().map(|r| r.year).max()) else {
        out.warnings.push("empty employment panel".into());
        return out;
    };
    out.windows = rolling_windows(first, last, window_years);
    if out.windows.is_empty() {
        out.warnings.push(format!(
            "window of {window_years} years does not fit the {first}-{last} panel"
        ));
        return out;
    }
    for ((soc, sector), years) in &cells {
        for &(t0, t1) in &out.windows {
            let (Some(a), Some(b)) = (years.get(&t0), years.get(&t1)) else {
                out.dropped += 1;
                continue;
            };
            let (Some(e0), Some(e1)) = (ln_pos(a.emp), ln_pos(b.emp)) else {
                out.dropped += 1;
                continue;
            };
            let w0 = a.wage().and_then(ln_pos);
            let w1 = b.wage().and_then(ln_pos);
            let dlog_wage = w0.zip(w1).map(|(x, y)| y - x);
            if dlog_wage.is_none() {
                out.wage_missing += 1;
            }
            out.rows.push(GrowthRow {
                soc: soc.clone(),
                sector: sector.clone(),
                window_start: t0,
                window_end: t1,
                dlog_emp: e1 - e0,
                dlog_wage,
                log_emp0: e0,
                log_wage0: w0,
                log_wage0_sq: w0.map(|v| v * v),
            });
        }
    }
    if out.dropped > 0 {
        out.warnings.push(format!(
            "{} occupation-sector-window cell(s) dropped for missing or nonpositive employment",
            out.dropped
        ));
    }
    out
}

/// Column view of the growth rows for regression. `window` is a label
/// `start-end` suitable for splitting.
pub fn growth_data_table(rows: &[GrowthRow]) -> DataTable {
    let mut t = DataTable::new(rows.len());
    t.add_categorical("soc", rows.iter().map(|r| Some(r.soc.to_string())).collect());
    t.add_categorical("sector", rows.iter().map(|r| Some(r.sector.clone())).collect());
    t.add_categorical(
        "window",
        rows.iter()
            .map(|r| Some(format!("{}-{}", r.window_start, r.window_end)))
            .collect(),
    );
    t.add_complete("window_start", rows.iter().map(|r| r.window_start as f64).collect());
    t.add_complete("dlog_emp", rows.iter().map(|r| r.dlog_emp).collect());
    t.add_numeric("dlog_wage", rows.iter().map(|r| r.dlog_wage).collect());
    t.add_complete("log_emp0", rows.iter().map(|r| r.log_emp0).collect());
    t.add_numeric("log_wage0", rows.iter().map(|r| r.log_wage0).collect());
    t.add_numeric("log_wage0_sq", rows.iter().map(|r| r.log_wage0_sq).collect());
    for d in 2..=5 {
        t.add_categorical(
            format!("soc{d}"),
            rows.iter().map(|r| Some(r.soc.group(d).to_string())).collect(),
        );
    }
    t
}
