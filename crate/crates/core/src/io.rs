// SPDX-License-Identifier: Apache-2.0

//! CSV ingestion and report writing.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! file written here reads back bit-for-bit.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::oracles::DIVERGENT;
use crate::series::TimeSeries;

/// Fewest usable rows [`ingest_csv`] accepts.
pub const MIN_ROWS: usize = 100;

/// A column picked by 1-based position or by header name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSelector {
    Index(usize),
    Name(String),
}

impl FromStr for ColumnSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().parse::<usize>() {
            Ok(0) => Err(Error::Argument("column positions start at 1".into())),
            Ok(i) => Ok(ColumnSelector::Index(i)),
            Err(_) if !s.trim().is_empty() => Ok(ColumnSelector::Name(s.trim().to_string())),
            Err(_) => Err(Error::Argument("empty column selector".into())),
        }
    }
}

impl fmt::Display for ColumnSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnSelector::Index(i) => write!(f, "{i}"),
            ColumnSelector::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOptions {
    pub has_header: bool,
    /// Refuse the file when any row has a non-numeric field, instead of
    /// dropping those rows.
    pub strict: bool,
    pub min_rows: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { has_header: false, strict: false, min_rows: MIN_ROWS }
    }
}

/// Numeric columns of a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Option<Vec<String>>,
    pub columns: Vec<Vec<f64>>,
    /// 1-based line numbers of dropped rows.
    pub rejected_rows: Vec<usize>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column_index(&self, sel: &ColumnSelector) -> Result<usize> {
        match sel {
            ColumnSelector::Index(i) if *i <= self.columns.len() => Ok(i - 1),
            ColumnSelector::Index(i) => Err(Error::Schema(format!(
                "column {i} requested, file has {}",
                self.columns.len()
            ))),
            ColumnSelector::Name(n) => self
                .headers
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == n))
                .ok_or_else(|| Error::Schema(format!("no column named `{n}`"))),
        }
    }

    pub fn series(&self, sel: &ColumnSelector) -> Result<TimeSeries> {
        let i = self.column_index(sel)?;
        let name = match (&self.headers, sel) {
            (Some(h), _) => h[i].clone(),
            (None, s) => format!("column {s}"),
        };
        TimeSeries::new(name, self.columns[i].clone())
    }
}

/// Parses every row of `reader`; rows with a non-numeric field are dropped
/// and listed, or refused under `strict`.
pub fn read_table<R: std::io::Read>(reader: R, opts: &IngestOptions) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = if opts.has_header {
        Some(rdr.headers()?.iter().map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };
    let mut width = headers.as_ref().map(Vec::len);
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut rejected = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        let parsed: Option<Vec<f64>> = rec
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(v) if v.len() == w => {
                if columns.is_empty() {
                    columns = vec![Vec::new(); w];
                }
                for (c, x) in columns.iter_mut().zip(v) {
                    c.push(x);
                }
            }
            _ => rejected.push(line),
        }
    }
    if opts.strict && !rejected.is_empty() {
        return Err(Error::NonNumericRows(rejected));
    }
    if columns.is_empty() {
        columns = vec![Vec::new(); width.unwrap_or(0)];
    }
    Ok(Table { headers, columns, rejected_rows: rejected })
}

/// Two aligned series from the selected columns of a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub x: TimeSeries,
    pub y: TimeSeries,
    pub rejected_rows: Vec<usize>,
}

pub fn ingest_csv(
    path: impl AsRef<Path>,
    columns: (&ColumnSelector, &ColumnSelector),
    opts: &IngestOptions,
) -> Result<Ingested> {
    let table = read_table(fs::File::open(path)?, opts)?;
    table.column_index(columns.0)?;
    table.column_index(columns.1)?;
    if table.rows() < opts.min_rows {
        return Err(Error::InsufficientData { usable: table.rows(), required: opts.min_rows });
    }
    Ok(Ingested {
        x: table.series(columns.0)?,
        y: table.series(columns.1)?,
        rejected_rows: table.rejected_rows,
    })
}

/// Writes equal-length columns under a header row.
pub fn write_csv<W: Write>(out: W, headers: &[&str], columns: &[&[f64]]) -> Result<()> {
    if headers.len() != columns.len() || columns.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(Error::Length("columns and headers must line up".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(headers)?;
    let rows = columns.first().map_or(0, |c| c.len());
    let mut rec = Vec::with_capacity(columns.len());
    for r in 0..rows {
        rec.clear();
        rec.extend(columns.iter().map(|c| c[r].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// A reported scalar: finite, or the divergent noiseless-limit sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReportValue {
    Finite(f64),
    Divergent,
}

impl ReportValue {
    pub fn from_f64(v: f64) -> Result<Self> {
        if v.is_finite() {
            Ok(ReportValue::Finite(v))
        } else if v == f64::INFINITY {
            Ok(ReportValue::Divergent)
        } else {
            Err(Error::Domain(format!("cannot report the value {v}")))
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            ReportValue::Finite(v) => *v,
            ReportValue::Divergent => f64::INFINITY,
        }
    }
}

impl fmt::Display for ReportValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReportValue::Finite(v) => write!(f, "{v}"),
            ReportValue::Divergent => f.write_str(DIVERGENT),
        }
    }
}

impl FromStr for ReportValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == DIVERGENT {
            return Ok(ReportValue::Divergent);
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(ReportValue::Finite)
            .ok_or_else(|| Error::Schema(format!("not a report value: `{s}`")))
    }
}

/// A curve written next to the report as its own CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

/// Sectioned `key: value` report.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalysisReport {
    pub inputs: Vec<(String, String)>,
    pub params: Vec<(String, String)>,
    pub results: Vec<(String, ReportValue)>,
    pub diagnostics: Vec<(String, String)>,
    pub versions: Vec<(String, String)>,
    pub curves: Vec<Curve>,
}

impl AnalysisReport {
    pub fn new() -> Self {
        Self {
            versions: vec![
                ("geoflow".into(), env!("CARGO_PKG_VERSION").into()),
                ("report_format".into(), "1".into()),
            ],
            ..Default::default()
        }
    }

    pub fn input(&mut self, k: impl Into<String>, v: impl ToString) -> &mut Self {
        self.inputs.push((k.into(), v.to_string()));
        self
    }

    pub fn param(&mut self, k: impl Into<String>, v: impl ToString) -> &mut Self {
        self.params.push((k.into(), v.to_string()));
        self
    }

    /// Records a result; `+inf` becomes the divergent sentinel.
    pub fn result(&mut self, k: impl Into<String>, v: f64) -> Result<&mut Self> {
        self.results.push((k.into(), ReportValue::from_f64(v)?));
        Ok(self)
    }

    pub fn diagnostic(&mut self, k: impl Into<String>, v: impl ToString) -> &mut Self {
        self.diagnostics.push((k.into(), v.to_string()));
        self
    }

    pub fn curve(&mut self, name: impl Into<String>, headers: &[&str], columns: Vec<Vec<f64>>) -> &mut Self {
        self.curves.push(Curve {
            name: name.into(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            columns,
        });
        self
    }

    pub fn get(&self, key: &str) -> Option<ReportValue> {
        self.results.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut section = |name: &str, rows: Vec<(&str, String)>| {
            s.push_str(&format!("[{name}]\n"));
            for (k, v) in rows {
                s.push_str(&format!("{k}: {}\n", v.replace('\n', " ")));
            }
            s.push('\n');
        };
        fn plain(v: &[(String, String)]) -> Vec<(&str, String)> {
            v.iter().map(|(k, v)| (k.as_str(), v.clone())).collect()
        }
        section("inputs", plain(&self.inputs));
        section("params", plain(&self.params));
        section("results", self.results.iter().map(|(k, v)| (k.as_str(), v.to_string())).collect());
        section("diagnostics", plain(&self.diagnostics));
        section("versions", plain(&self.versions));
        s
    }

    /// Parses the text form back; curves are not part of it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut r = AnalysisReport::default();
        let mut current = String::new();
        for line in text.lines() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = name.to_string();
                continue;
            }
            let (k, v) = line
                .split_once(": ")
                .ok_or_else(|| Error::Schema(format!("malformed report line `{line}`")))?;
            let (k, v) = (k.to_string(), v.to_string());
            match current.as_str() {
                "inputs" => r.inputs.push((k, v)),
                "params" => r.params.push((k, v)),
                "results" => r.results.push((k, v.parse()?)),
                "diagnostics" => r.diagnostics.push((k, v)),
                "versions" => r.versions.push((k, v)),
                other => return Err(Error::Schema(format!("unknown report section `{other}`"))),
            }
        }
        Ok(r)
    }

    /// Writes `<stem>.txt` and one `<stem>.<curve>.csv` per curve; returns
    /// the paths written.
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let stem = stem.as_ref();
        if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let with_suffix = |suffix: &str| {
            let mut p = stem.as_os_str().to_owned();
            p.push(suffix);
            PathBuf::from(p)
        };
        let main = with_suffix(".txt");
        fs::write(&main, self.render())?;
        let mut written = vec![main];
        for c in &self.curves {
            let p = with_suffix(&format!(".{}.csv", c.name));
            let headers: Vec<&str> = c.headers.iter().map(String::as_str).collect();
            let cols: Vec<&[f64]> = c.columns.iter().map(Vec::as_slice).collect();
            write_csv(fs::File::create(&p)?, &headers, &cols)?;
            written.push(p);
        }
        Ok(written)
    }
}
