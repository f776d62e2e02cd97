//! Header-addressed reading of delimited text files.

use std::io::Read;

use super::{IngestError, RowIssue};

/// Reads a whole stream as UTF-8, dropping a leading byte-order mark and
/// normalizing CRLF / CR line endings to LF.
pub fn read_text<R: Read>(mut reader: R) -> Result<String, IngestError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes).map_err(|e| IngestError::Encoding(e.to_string()))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    Ok(text.replace("\r\n", "\n").replace('\r', "\n"))
}

/// A parsed delimited table: header plus data rows with 1-based line numbers.
#[derive(Debug)]
pub struct Table {
    header: Vec<String>,
    pub rows: Vec<Row>,
    /// Rows whose field count differs from the header.
    pub malformed: Vec<RowIssue>,
}

#[derive(Debug)]
pub struct Row {
    pub line: u64,
    pub fields: Vec<String>,
}

impl Table {
    /// Tab-delimited, no quoting (the O*NET distribution format).
    pub fn tab(text: &str) -> Result<Self, IngestError> {
        Self::parse(text, b'\t', false)
    }

    /// Delimiter sniffed from the header line (tab if present, else comma),
    /// with CSV quoting.
    pub fn sniffed(text: &str) -> Result<Self, IngestError> {
        let first = text.lines().next().unwrap_or("");
        let delim = if first.contains('\t') { b'\t' } else { b',' };
        Self::parse(text, delim, true)
    }

    fn parse(text: &str, delimiter: u8, quoting: bool) -> Result<Self, IngestError> {
        if text.trim().is_empty() {
            return Err(IngestError::MissingHeader);
        }
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .quoting(quoting)
            .flexible(true)
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| IngestError::Format(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if header.iter().all(|h| h.is_empty()) {
            return Err(IngestError::MissingHeader);
        }
        let mut rows = Vec::new();
        let mut malformed = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| IngestError::Format(e.to_string()))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() == 1 && rec.get(0).is_some_and(|f| f.trim().is_empty()) {
                continue;
            }
            if rec.len() != header.len() {
                malformed.push(RowIssue::new(
                    line,
                    format!("expected {} columns, found {}", header.len(), rec.len()),
                ));
                continue;
            }
            rows.push(Row {
                line,
                fields: rec.iter().map(str::to_string).collect(),
            });
        }
        Ok(Self {
            header,
            rows,
            malformed,
        })
    }

    /// Index of the first header matching one of `names`, case-insensitively.
    pub fn find(&self, names: &[&str]) -> Option<usize> {
        names
            .iter()
            .find_map(|n| self.header.iter().position(|h| h.eq_ignore_ascii_case(n)))
    }

    pub fn require(&self, names: &[&str]) -> Result<usize, IngestError> {
        self.find(names)
            .ok_or_else(|| IngestError::MissingColumn(names[0].to_string()))
    }
}

impl Row {
    pub fn get(&self, idx: usize) -> &str {
        self.fields[idx].trim()
    }
}

/// Key/value pairs from a two-column file (comma or tab separated). Blank
/// lines and lines starting with `#` are skipped.
pub fn two_column(text: &str) -> Vec<(u64, String, String)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .filter_map(|(i, l)| {
            let (a, b) = l.split_once('\t').or_else(|| l.rsplit_once(','))?;
            Some((i as u64 + 1, a.trim().to_string(), b.trim().to_string()))
        })
        .collect()
}
