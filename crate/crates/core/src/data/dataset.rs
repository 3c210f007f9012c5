use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// An N-variate series of T timestamps, stored variate-major (`[N × T]`).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub variate_names: Vec<String>,
    pub timestamps: Option<Vec<String>>,
    values: Vec<f64>,
    n_vars: usize,
    len: usize,
}

impl TimeSeriesDataset {
    /// Build from one `Vec` per variate; every variate must have the same length.
    pub fn from_variates(name: impl Into<String>, variates: Vec<Vec<f64>>) -> Result<Self> {
        let n_vars = variates.len();
        if n_vars == 0 {
            return Err(Error::Contract("dataset needs at least one variate".into()));
        }
        let len = variates[0].len();
        if len == 0 || variates.iter().any(|v| v.len() != len) {
            return Err(Error::Contract("variates must share a positive length".into()));
        }
        if let Some(i) = variates.iter().flatten().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                op: "dataset".into(),
                index: i,
            });
        }
        Ok(TimeSeriesDataset {
            name: name.into(),
            variate_names: (0..n_vars).map(|i| format!("v{i}")).collect(),
            timestamps: None,
            values: variates.into_iter().flatten().collect(),
            n_vars,
            len,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Number of timestamps T.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn variate(&self, v: usize) -> &[f64] {
        &self.values[v * self.len..(v + 1) * self.len]
    }

    pub(crate) fn variate_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.values[v * self.len..(v + 1) * self.len]
    }
}

/// Which column, if any, holds timestamps.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum DateColumn {
    /// Use a column named `date` (any case) when present.
    #[default]
    Auto,
    None,
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CsvSchema {
    pub date_column: DateColumn,
    /// Restrict to these columns, in this order. `None` takes every non-date column.
    pub value_columns: Option<Vec<String>>,
}

/// What the loader had to repair.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LoadReport {
    pub rows: usize,
    /// Missing cells forward-filled, per variate.
    pub filled: Vec<usize>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim().to_ascii_lowercase().as_str(), "" | "nan" | "na" | "null")
}

/// Load a delimited text file with a header row. Variates become rows of the
/// dataset; missing cells are forward-filled (leading gaps take the first
/// observed value) and counted in the report.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(TimeSeriesDataset, LoadReport)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_csv(&text, &name, schema)
}

pub fn parse_csv(text: &str, name: &str, schema: &CsvSchema) -> Result<(TimeSeriesDataset, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Load {
            line: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Load {
            line: 1,
            msg: "empty file or missing header".into(),
        });
    }
    let date_idx = match &schema.date_column {
        DateColumn::Auto => header.iter().position(|h| h.eq_ignore_ascii_case("date")),
        DateColumn::None => None,
        DateColumn::Named(n) => Some(header.iter().position(|h| h == n).ok_or_else(|| Error::Load {
            line: 1,
            msg: format!("date column {n:?} not in header"),
        })?),
    };
    let value_idx: Vec<usize> = match &schema.value_columns {
        Some(cols) => cols
            .iter()
            .map(|c| {
                header.iter().position(|h| h == c).ok_or_else(|| Error::Load {
                    line: 1,
                    msg: format!("value column {c:?} not in header"),
                })
            })
            .collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&i| Some(i) != date_idx).collect(),
    };
    if value_idx.is_empty() {
        return Err(Error::Load {
            line: 1,
            msg: "no value columns".into(),
        });
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); value_idx.len()];
    let mut stamps = date_idx.map(|_| Vec::new());
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no + 2;
        let record = record.map_err(|e| Error::Load {
            line,
            msg: match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                    format!("ragged row: expected {expected_len} fields, found {len}")
                }
                _ => e.to_string(),
            },
        })?;
        if let (Some(i), Some(s)) = (date_idx, stamps.as_mut()) {
            s.push(record.get(i).unwrap_or_default().to_string());
        }
        for (col, &i) in columns.iter_mut().zip(&value_idx) {
            let cell = record.get(i).unwrap_or_default();
            let v = if is_missing(cell) {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| Error::Load {
                    line,
                    msg: format!("column {:?}: cannot parse {cell:?} as a number", header[i]),
                })?
            };
            col.push(v);
        }
    }
    let rows = columns[0].len();
    if rows == 0 {
        return Err(Error::Load {
            line: 2,
            msg: "no data rows".into(),
        });
    }

    let mut filled = Vec::with_capacity(columns.len());
    for (col, &i) in columns.iter_mut().zip(&value_idx) {
        let first = col.iter().copied().find(|v| v.is_finite()).ok_or_else(|| Error::Load {
            line: 0,
            msg: format!("column {:?} has no finite values", header[i]),
        })?;
        let mut last = first;
        let mut count = 0;
        for v in col.iter_mut() {
            if v.is_finite() {
                last = *v;
            } else {
                *v = last;
                count += 1;
            }
        }
        if count > 0 {
            warn!("{name}: forward-filled {count} missing cells in column {:?}", header[i]);
        }
        filled.push(count);
    }

    let mut ds = TimeSeriesDataset::from_variates(name, columns)?;
    ds.variate_names = value_idx.iter().map(|&i| header[i].clone()).collect();
    ds.timestamps = stamps;
    Ok((ds, LoadReport { rows, filled }))
}
