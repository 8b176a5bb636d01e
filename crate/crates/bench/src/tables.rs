//! Numeric CSV and JSON file helpers.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use csdi_core::autodiff::Tensor;
use serde::Serialize;

/// Reads a numeric matrix, one observation per row. A first row that does
/// not parse as numbers is treated as a header.
pub fn read_matrix(path: &Path) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut cols = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => bail!("{}: row {} is not numeric: {e}", path.display(), i + 1),
        };
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                bail!(
                    "{}: row {} has {} columns, expected {c}",
                    path.display(),
                    i + 1,
                    values.len()
                )
            }
            Some(_) => {}
        }
        data.extend(values);
        rows += 1;
    }
    let Some(cols) = cols else {
        bail!("{}: no numeric rows", path.display());
    };
    Ok(Tensor::matrix(rows, cols, data)?)
}

/// Writes a header and rows of numbers.
pub fn write_matrix(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

/// `prefix0, prefix1, ...`.
pub fn columns(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Row `i` of each tensor, concatenated.
pub fn joined_rows(parts: &[&Tensor]) -> Vec<Vec<f64>> {
    let rows = parts.first().map_or(0, |t| t.rows());
    (0..rows)
        .map(|i| {
            parts
                .iter()
                .flat_map(|t| t.row(i).iter().copied())
                .collect()
        })
        .collect()
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// `(x, y, series)` rows for external plotting.
pub fn write_plot_data(path: &Path, points: &[(f64, f64, String)]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["x", "y", "series"])?;
    for (x, y, s) in points {
        w.write_record([x.to_string(), y.to_string(), s.clone()])?;
    }
    w.flush()?;
    Ok(())
}
