//! Labelled numeric tables: first column holds a row label, the header names
//! the remaining columns.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;

pub struct LabelledMatrix {
    pub row_labels: Vec<String>,
    pub columns: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn read_matrix(path: &Path) -> Result<LabelledMatrix> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        bail!(
            "{}: expected a label column and at least one value column",
            path.display()
        );
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut row_labels = Vec::new();
    let mut flat = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // header is line 1
        let line = i + 2;
        if rec.len() != header.len() {
            bail!(
                "{} line {line}: {} fields, expected {}",
                path.display(),
                rec.len(),
                header.len()
            );
        }
        row_labels.push(rec[0].to_string());
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.trim().parse().with_context(|| {
                format!(
                    "{} line {line}, column `{}`: `{cell}` is not a number",
                    path.display(),
                    columns[j]
                )
            })?;
            flat.push(v);
        }
    }
    if row_labels.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    let values = DMatrix::from_row_slice(row_labels.len(), columns.len(), &flat);
    Ok(LabelledMatrix {
        row_labels,
        columns,
        values,
    })
}

pub fn write_matrix(
    path: &Path,
    corner: &str,
    row_labels: &[String],
    columns: &[String],
    m: &DMatrix<f64>,
) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec![corner.to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for (i, label) in row_labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_weights(path: &Path, models: &[String], weights: &[f64]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["model", "weight"])?;
    for (m, v) in models.iter().zip(weights) {
        w.write_record([m.as_str(), &v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
