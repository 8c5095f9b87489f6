//! CSV ingestion with one-hot encoding of categorical columns.

use std::io::Read;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use bethe_core::data::{Dataset, Targets};
use bethe_core::Matrix;

/// What the target column holds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetKind {
    Real,
    /// Labels mapped to `0..K` in `order` if given, else in first-appearance
    /// order.
    Labels {
        order: Option<Vec<String>>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvSpec {
    pub target: String,
    pub kind: TargetKind,
    pub categorical: Vec<String>,
    /// Columns ignored entirely (identifiers and the like).
    pub drop: Vec<String>,
}

pub fn load_csv(path: &Path, spec: &CsvSpec) -> Result<Dataset> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_csv_reader(file, spec).with_context(|| format!("reading {}", path.display()))
}

enum Column {
    Numeric(Vec<f64>),
    /// Level index per row and the levels in first-appearance order.
    Categorical(Vec<usize>, Vec<String>),
}

pub fn load_csv_reader<R: Read>(reader: R, spec: &CsvSpec) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let target_idx = header
        .iter()
        .position(|h| *h == spec.target)
        .ok_or_else(|| anyhow!("target column '{}' not in header", spec.target))?;
    for name in spec.categorical.iter().chain(&spec.drop) {
        if !header.contains(name) {
            bail!("column '{name}' not in header");
        }
    }
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|&j| j != target_idx && !spec.drop.contains(&header[j]))
        .collect();
    let mut columns: Vec<Column> = feature_idx
        .iter()
        .map(|&j| {
            if spec.categorical.contains(&header[j]) {
                Column::Categorical(Vec::new(), Vec::new())
            } else {
                Column::Numeric(Vec::new())
            }
        })
        .collect();
    let mut raw_targets: Vec<String> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("row {}", r + 2))?;
        if rec.len() != header.len() {
            bail!(
                "row {}: expected {} fields, found {}",
                r + 2,
                header.len(),
                rec.len()
            );
        }
        for (c, &j) in feature_idx.iter().enumerate() {
            let cell = &rec[j];
            match &mut columns[c] {
                Column::Numeric(v) => v.push(parse_cell(cell, r, &header[j])?),
                Column::Categorical(idx, levels) => {
                    let k = match levels.iter().position(|l| l == cell) {
                        Some(k) => k,
                        None => {
                            levels.push(cell.to_string());
                            levels.len() - 1
                        }
                    };
                    idx.push(k);
                }
            }
        }
        raw_targets.push(rec[target_idx].to_string());
    }
    let n = raw_targets.len();
    if n == 0 {
        bail!("no data rows");
    }
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (c, &j) in feature_idx.iter().enumerate() {
        match &columns[c] {
            Column::Numeric(v) => {
                names.push(header[j].clone());
                cols.push(v.clone());
            }
            Column::Categorical(idx, levels) => {
                for (k, level) in levels.iter().enumerate() {
                    names.push(format!("{}={level}", header[j]));
                    cols.push(idx.iter().map(|&i| f64::from(u8::from(i == k))).collect());
                }
            }
        }
    }
    let x = Matrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let (y, targets) = match &spec.kind {
        TargetKind::Real => (
            raw_targets
                .iter()
                .enumerate()
                .map(|(r, s)| parse_cell(s, r, &spec.target))
                .collect::<Result<Vec<_>>>()?,
            Targets::Real,
        ),
        TargetKind::Labels { order } => {
            let mut levels: Vec<String> = order.clone().unwrap_or_default();
            let mut y = Vec::with_capacity(n);
            for (r, s) in raw_targets.iter().enumerate() {
                let k = match levels.iter().position(|l| l == s) {
                    Some(k) => k,
                    None if order.is_none() => {
                        levels.push(s.clone());
                        levels.len() - 1
                    }
                    None => bail!("row {}: label '{s}' not in label_order", r + 2),
                };
                y.push(k as f64);
            }
            (y, Targets::Classes { names: levels })
        }
    };
    Ok(Dataset::new(x, y, names, targets)?)
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| {
        anyhow!(
            "row {}, column '{column}': cannot parse '{cell}' as a number",
            row + 2
        )
    })?;
    if !v.is_finite() {
        bail!("row {}, column '{column}': non-finite value", row + 2);
    }
    Ok(v)
}
