//! One header block plus one CSV table per file.

use std::path::Path;

use crate::config::Header;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Header,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Shortest round-trip scientific notation; `NaN` stays `NaN`.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

impl Table {
    pub fn new(header: Header, columns: &[&str]) -> Self {
        Self {
            header,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = self.header.render()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let body = w
            .into_inner()
            .map_err(|e| CliError::Usage(format!("csv buffer: {e}")))?;
        out.push_str(&String::from_utf8(body).expect("csv output is UTF-8"));
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Column values parsed as floats.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| r[k].parse().unwrap_or(f64::NAN))
                .collect(),
        )
    }
}

/// Read a table written by [`Table::to_csv`].
pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_table(&text)
}

pub fn parse_table(text: &str) -> Result<Table> {
    let header = Header::parse(text)?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let columns = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Table {
        header,
        columns,
        rows,
    })
}
