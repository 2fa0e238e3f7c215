//! Ingestion of dated series tables, optionally in the FRED-MD layout where
//! the second row carries per-series transformation codes.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{FgmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    /// One code in `1..=7` per series when the file carries a code row.
    pub tcodes: Option<Vec<u8>>,
    /// Column-major values; `None` marks a missing cell.
    pub columns: Vec<Vec<Option<f64>>>,
}

impl DataTable {
    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_series(&self) -> usize {
        self.names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Writes the table back as CSV (ISO dates, empty cells for missing values).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        if let Some(codes) = &self.tcodes {
            let mut row = vec!["Transform:".to_string()];
            row.extend(codes.iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
        for (r, d) in self.dates.iter().enumerate() {
            let mut row = vec![d.format("%Y-%m-%d").to_string()];
            row.extend(
                self.columns
                    .iter()
                    .map(|c| c[r].map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Accepts `YYYY-MM-DD` and `M/D/YYYY`.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(s, "%m/%d/%Y"))
        .ok()
}

fn parse_cell(s: &str) -> std::result::Result<Option<f64>, ()> {
    let s = s.trim();
    match s {
        "" | "NA" | "NaN" | "nan" | "." | "#N/A" => Ok(None),
        _ => match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            Ok(_) => Ok(None),
            Err(_) => Err(()),
        },
    }
}

fn parse_code(s: &str) -> Option<u8> {
    let v: f64 = s.trim().parse().ok()?;
    if v.fract() == 0.0 && (1.0..=7.0).contains(&v) {
        Some(v as u8)
    } else {
        None
    }
}

pub fn ingest_panel(path: &Path) -> Result<DataTable> {
    ingest_reader(File::open(path)?)
}

pub fn ingest_reader<R: Read>(input: R) -> Result<DataTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(r) => r?,
        None => {
            return Err(FgmError::Ingest {
                row: 1,
                column: String::new(),
                message: "file is empty".into(),
            })
        }
    };
    let date_col = header.get(0).unwrap_or("").trim().to_string();
    let names: Vec<String> = header
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    if names.is_empty() {
        return Err(FgmError::Ingest {
            row: 1,
            column: String::new(),
            message: "no series columns after the date column".into(),
        });
    }
    let n = names.len();
    let mut dates = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); n];
    let mut tcodes = None;
    for (idx, rec) in rows.enumerate() {
        let line = idx + 2;
        let rec = rec?;
        if rec.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let first = rec.get(0).unwrap_or("").trim();
        if line == 2 && parse_date(first).is_none() {
            let codes: Option<Vec<u8>> = (0..n)
                .map(|j| rec.get(j + 1).and_then(parse_code))
                .collect();
            if first.to_ascii_lowercase().starts_with("transform") || codes.is_some() {
                tcodes = Some(codes.ok_or_else(|| FgmError::Ingest {
                    row: line,
                    column: names[0].clone(),
                    message: "transform codes must be integers 1-7".into(),
                })?);
                continue;
            }
        }
        let date = parse_date(first).ok_or_else(|| FgmError::Ingest {
            row: line,
            column: date_col.clone(),
            message: format!("cannot parse date `{first}`"),
        })?;
        dates.push(date);
        for (j, col) in columns.iter_mut().enumerate() {
            let cell = rec.get(j + 1).unwrap_or("");
            let v = parse_cell(cell).map_err(|_| FgmError::Ingest {
                row: line,
                column: names[j].clone(),
                message: format!("non-numeric value `{}`", cell.trim()),
            })?;
            col.push(v);
        }
    }
    if dates.is_empty() {
        return Err(FgmError::Ingest {
            row: 2,
            column: date_col,
            message: "no data rows".into(),
        });
    }
    Ok(DataTable {
        dates,
        names,
        tcodes,
        columns,
    })
}

/// Stationarity transformation of a predictor by its FRED-MD code:
/// 1 level, 2 Δx, 3 Δ²x, 4 ln x, 5 Δln x, 6 Δ²ln x, 7 Δ(x_t/x_{t−1} − 1).
/// Cells without enough history, or with a non-positive value under a log,
/// become missing.
pub fn apply_tcode(x: &[Option<f64>], code: u8) -> Result<Vec<Option<f64>>> {
    let ln = |v: Option<f64>| v.filter(|a| *a > 0.0).map(f64::ln);
    let diff = |s: &[Option<f64>]| -> Vec<Option<f64>> {
        (0..s.len())
            .map(|t| {
                if t == 0 {
                    None
                } else {
                    s[t].zip(s[t - 1]).map(|(a, b)| a - b)
                }
            })
            .collect()
    };
    Ok(match code {
        1 => x.to_vec(),
        2 => diff(x),
        3 => diff(&diff(x)),
        4 => x.iter().map(|v| ln(*v)).collect(),
        5 => diff(&x.iter().map(|v| ln(*v)).collect::<Vec<_>>()),
        6 => diff(&diff(&x.iter().map(|v| ln(*v)).collect::<Vec<_>>())),
        7 => {
            let growth: Vec<Option<f64>> = (0..x.len())
                .map(|t| {
                    if t == 0 {
                        None
                    } else {
                        x[t].zip(x[t - 1].filter(|b| *b != 0.0))
                            .map(|(a, b)| a / b - 1.0)
                    }
                })
                .collect();
            diff(&growth)
        }
        _ => {
            return Err(FgmError::InvalidParameter(format!(
                "unknown transform code {code}"
            )))
        }
    })
}

/// Rows lost at the start of a series by its transform code.
pub fn tcode_lag(code: u8) -> usize {
    match code {
        2 | 5 => 1,
        3 | 6 | 7 => 2,
        _ => 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    /// `(1/h) ln(Y_{t+h}/Y_t)`.
    AvgLogGrowth,
    /// `(1/h) (Y_{t+h}/Y_t)`.
    AvgChange,
    /// `ln Y_t`.
    LogLevel,
}

impl TargetTransform {
    pub fn uses_log(self) -> bool {
        !matches!(self, TargetTransform::AvgChange)
    }
}

/// Transformed target. For the two growth forms entry `i` is dated `i + h`
/// and the result has `T − h` entries; `LogLevel` keeps all `T`.
pub fn transform_target(
    levels: &[f64],
    labels: &[String],
    transform: TargetTransform,
    h: usize,
) -> Result<Vec<f64>> {
    if h == 0 {
        return Err(FgmError::InvalidParameter(
            "horizon must be at least 1".into(),
        ));
    }
    if labels.len() != levels.len() {
        return Err(FgmError::InvalidInput(
            "one label per level is required".into(),
        ));
    }
    let check = |i: usize| -> Result<f64> {
        let v = levels[i];
        if transform.uses_log() && !(v > 0.0) {
            return Err(FgmError::Domain(format!(
                "non-positive level {v} at {} under a log transform",
                labels[i]
            )));
        }
        if transform == TargetTransform::AvgChange && v == 0.0 {
            return Err(FgmError::Domain(format!(
                "zero level at {} in a ratio",
                labels[i]
            )));
        }
        Ok(v)
    };
    match transform {
        TargetTransform::LogLevel => (0..levels.len()).map(|i| check(i).map(f64::ln)).collect(),
        TargetTransform::AvgLogGrowth | TargetTransform::AvgChange => {
            let hf = h as f64;
            (h..levels.len())
                .map(|i| {
                    let ratio = check(i)? / check(i - h)?;
                    Ok(if transform == TargetTransform::AvgLogGrowth {
                        ratio.ln() / hf
                    } else {
                        ratio / hf
                    })
                })
                .collect()
        }
    }
}
