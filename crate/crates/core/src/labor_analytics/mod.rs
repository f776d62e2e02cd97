//! Tertile classification, correlations, growth tables and fixed-effect OLS
//! over scored occupations.

mod correlation;
mod growth;
mod ols;
mod table;
mod tertiles;

use std::io::Write;

pub use correlation::{correlate, p_value, pair_by_key, Correlation, CorrelationError, CorrelationMethod};
pub use growth::{growth_data_table, growth_table, rolling_windows, GrowthOutcome, GrowthRow, ALL_SECTORS};
pub use ols::{ols_fit, Coefficient, OlsError, RegressionResult, RegressionSpec, INTERCEPT};
pub use table::{Column, DataTable};
pub use tertiles::{
    assign, classify_tertiles, join_employment, quantile_sorted, weighted_quantile, write_tertiles, GroupShare,
    SkillGroups, Tertile, TertileError, TertileReport, TertileSummary, TertileWeighting, TERTILES_HEADER,
};

pub const REGRESSIONS_HEADER: [&str; 8] = ["spec_id", "term", "coefficient", "se", "se_cluster", "n", "r2", "group"];

/// One row per coefficient. `group` labels the subset a result was fitted
/// on (for example a window) and is empty for whole-table fits.
pub fn write_regressions<W: Write>(writer: W, results: &[(String, RegressionResult)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REGRESSIONS_HEADER)?;
    for (group, r) in results {
        for c in &r.coefficients {
            w.write_record([
                r.spec_id.as_str(),
                c.term.as_str(),
                &c.estimate.to_string(),
                &c.se.to_string(),
                &c.se_cluster.map(|v| v.to_string()).unwrap_or_default(),
                &r.n_observations.to_string(),
                &r.r_squared.to_string(),
                group.as_str(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const CORRELATIONS_HEADER: [&str; 6] = ["series_a", "series_b", "method", "coefficient", "p_value", "n"];

pub struct CorrelationRow {
    pub series_a: String,
    pub series_b: String,
    pub method: CorrelationMethod,
    pub result: Correlation,
}

pub fn write_correlations<W: Write>(writer: W, rows: &[CorrelationRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CORRELATIONS_HEADER)?;
    for r in rows {
        w.write_record([
            r.series_a.as_str(),
            r.series_b.as_str(),
            r.method.as_str(),
            &r.result.coefficient.to_string(),
            &r.result.p_value.to_string(),
            &r.result.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
