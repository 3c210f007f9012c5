//! Layer × patch-length grid over several seeds, summarized as mean ± std per cell.

use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{EvalReport, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub layers: Vec<usize>,
    pub patches: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            layers: vec![1, 2, 3],
            patches: vec![8, 16],
            seeds: vec![2022, 2023, 2024, 2025, 2026],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (`n - 1`); zero for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n_layers: usize,
    pub patch_len: usize,
    pub runs: Vec<SeedRun>,
}

impl SweepCell {
    fn metric(&self, f: impl Fn(&EvalReport) -> f64) -> Option<Stat> {
        let v: Vec<f64> = self.runs.iter().filter_map(|r| r.report.as_ref().map(&f)).collect();
        Stat::of(&v)
    }

    pub fn mse(&self) -> Option<Stat> {
        self.metric(|r| r.mse)
    }

    pub fn mae(&self) -> Option<Stat> {
        self.metric(|r| r.mae)
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.report.is_none()).count()
    }
}

/// Run every cell of `grid`. `run` trains one configuration and returns its test
/// report; a failing run is recorded in its cell and the sweep continues.
pub fn run_sweep(
    model: &ModelConfig,
    train: &TrainConfig,
    grid: &SweepGrid,
    mut run: impl FnMut(&ModelConfig, &TrainConfig) -> Result<EvalReport>,
) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &n_layers in &grid.layers {
        for &patch_len in &grid.patches {
            let runs = grid
                .seeds
                .iter()
                .map(|&seed| {
                    let m = ModelConfig {
                        n_layers,
                        patch_len,
                        seed,
                        ..model.clone()
                    };
                    let t = TrainConfig { seed, ..train.clone() };
                    match run(&m, &t) {
                        Ok(report) => SeedRun {
                            seed,
                            report: Some(report),
                            error: None,
                        },
                        Err(e) => {
                            warn!("sweep cell layers={n_layers} patch={patch_len} seed={seed} failed: {e}");
                            SeedRun {
                                seed,
                                report: None,
                                error: Some(e.to_string()),
                            }
                        }
                    }
                })
                .collect();
            cells.push(SweepCell {
                n_layers,
                patch_len,
                runs,
            });
        }
    }
    cells
}

/// One summarized row of the results table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub n_layers: usize,
    pub patch_len: usize,
    pub mse: Option<Stat>,
    pub mae: Option<Stat>,
    pub runs: usize,
    pub failed: usize,
}

impl From<&SweepCell> for TableRow {
    fn from(c: &SweepCell) -> Self {
        TableRow {
            n_layers: c.n_layers,
            patch_len: c.patch_len,
            mse: c.mse(),
            mae: c.mae(),
            runs: c.runs.len(),
            failed: c.failures(),
        }
    }
}

const HEADER: &str = "n_layers\tpatch_len\tmse\tmae\truns\tfailed";

fn show(s: Option<Stat>) -> String {
    s.map_or_else(|| "failed".into(), |s| format!("{:.6}±{:.6}", s.mean, s.std))
}

fn read_stat(v: &str) -> Result<Option<Stat>> {
    if v == "failed" {
        return Ok(None);
    }
    let (m, s) = v
        .split_once('±')
        .ok_or_else(|| Error::Format(format!("expected mean±std, got {v:?}")))?;
    let p = |x: &str| x.parse::<f64>().map_err(|_| Error::Format(format!("bad number {x:?}")));
    Ok(Some(Stat { mean: p(m)?, std: p(s)? }))
}

/// Tab-separated table, one row per cell, values as `mean±std` to six decimals.
pub fn format_table(rows: &[TableRow]) -> String {
    let mut out = format!("{HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.n_layers,
            r.patch_len,
            show(r.mse),
            show(r.mae),
            r.runs,
            r.failed
        );
    }
    out
}

pub fn parse_table(text: &str) -> Result<Vec<TableRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Format("missing sweep table header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 6 {
                return Err(Error::Format(format!("expected 6 fields, got {}", f.len())));
            }
            let int = |x: &str| x.parse::<usize>().map_err(|_| Error::Format(format!("bad integer {x:?}")));
            Ok(TableRow {
                n_layers: int(f[0])?,
                patch_len: int(f[1])?,
                mse: read_stat(f[2])?,
                mae: read_stat(f[3])?,
                runs: int(f[4])?,
                failed: int(f[5])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_cells_and_failures_recorded() {
        let grid = SweepGrid {
            seeds: vec![1, 2],
            ..SweepGrid::default()
        };
        let cells = run_sweep(&ModelConfig::default(), &TrainConfig::default(), &grid, |m, t| {
            if m.n_layers == 3 && t.seed == 2 {
                return Err(Error::Config("boom".into()));
            }
            Ok(EvalReport {
                mse: m.n_layers as f64 + t.seed as f64,
                mae: 0.5,
                windows: 1,
            })
        });
        assert_eq!(cells.len(), 6);
        let rows: Vec<TableRow> = cells.iter().map(TableRow::from).collect();
        assert_eq!(rows[0].mse.unwrap().mean, 2.5);
        assert_eq!(rows[5].failed, 1);
        assert_eq!(rows[5].mse.unwrap().std, 0.0);
        let text = format_table(&rows);
        assert_eq!(format_table(&parse_table(&text).unwrap()), text);
    }

    #[test]
    fn stat_by_hand() {
        let s = Stat::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert!(Stat::of(&[]).is_none());
    }
}
