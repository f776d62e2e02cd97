use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::table::{read_text, Table};
use super::{IngestError, RowIssue, SocCode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmploymentRecord {
    pub soc: SocCode,
    pub year: i32,
    pub employment: f64,
    pub wage: Option<f64>,
    pub sector: Option<String>,
}

#[derive(Debug, Default)]
pub struct EmploymentParse {
    pub records: Vec<EmploymentRecord>,
    pub warnings: Vec<RowIssue>,
}

fn parse_count(cell: &str) -> Option<f64> {
    let cleaned: String = cell.chars().filter(|c| *c != ',' && *c != '$').collect();
    cleaned
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && *v >= 0.0)
}

/// Reads a BLS OES style table. Column names are matched case-insensitively
/// (`OCC_CODE`/`soc`, `TOT_EMP`/`employment`, `A_MEAN`/`wage`,
/// `NAICS`/`sector`, `YEAR`). A `YEAR` column overrides `year`; rows whose
/// `O_GROUP` is present and not `detailed` are aggregates and are skipped.
pub fn parse_employment<R: Read>(reader: R, year: i32) -> Result<EmploymentParse, IngestError> {
    let text = read_text(reader)?;
    let table = Table::sniffed(&text)?;
    let soc_col = table.require(&["OCC_CODE", "soc", "soc_code", "occupation_code"])?;
    let emp_col = table.require(&["TOT_EMP", "employment", "emp"])?;
    let wage_col = table.find(&["A_MEAN", "wage", "mean_wage"]);
    let sector_col = table.find(&["NAICS", "sector", "industry"]);
    let year_col = table.find(&["YEAR"]);
    let group_col = table.find(&["O_GROUP", "OCC_GROUP"]);

    let mut out = EmploymentParse {
        warnings: table.malformed.clone(),
        ..Default::default()
    };
    for row in &table.rows {
        if let Some(g) = group_col {
            let group = row.get(g);
            if !group.is_empty() && !group.eq_ignore_ascii_case("detailed") {
                continue;
            }
        }
        let soc = match SocCode::normalize(row.get(soc_col)) {
            Ok(s) => s,
            Err(e) => {
                out.warnings.push(RowIssue::new(row.line, e.to_string()));
                continue;
            }
        };
        let Some(employment) = parse_count(row.get(emp_col)) else {
            tracing::warn!(line = row.line, "unparseable employment {:?}", row.get(emp_col));
            out.warnings.push(RowIssue::new(
                row.line,
                format!("unparseable employment {:?}", row.get(emp_col)),
            ));
            continue;
        };
        let row_year = match year_col {
            Some(c) => match row.get(c).parse::<i32>() {
                Ok(y) => y,
                Err(_) => {
                    out.warnings
                        .push(RowIssue::new(row.line, format!("bad year {:?}", row.get(c))));
                    continue;
                }
            },
            None => year,
        };
        out.records.push(EmploymentRecord {
            soc,
            year: row_year,
            employment,
            wage: wage_col.and_then(|c| parse_count(row.get(c))),
            sector: sector_col.map(|c| row.get(c).to_string()).filter(|s| !s.is_empty()),
        });
    }
    Ok(out)
}

pub fn write_employment_csv<W: Write>(writer: W, records: &[EmploymentRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["soc", "year", "employment", "wage", "sector"])?;
    for r in records {
        w.write_record([
            r.soc.as_str(),
            &r.year.to_string(),
            &r.employment.to_string(),
            &r.wage.map(|v| v.to_string()).unwrap_or_default(),
            r.sector.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_employment_csv<R: Read>(reader: R) -> Result<Vec<EmploymentRecord>, IngestError> {
    let text = read_text(reader)?;
    let text: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    Ok(parse_employment(text.as_bytes(), 0)?.records)
}
