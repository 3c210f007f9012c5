//! Layers × patch-length grid over several seeds, printed as a mean±std table.
//!
//! cargo run --release --example robustness_sweep

use paralleltime::cli::fit_and_test;
use paralleltime::data::{sinusoids, Prepared, SplitScheme, SyntheticSpec};
use paralleltime::model::ModelConfig;
use paralleltime::sweep::{format_table, run_sweep, SweepGrid, TableRow};
use paralleltime::train::TrainConfig;

fn main() -> anyhow::Result<()> {
    let raw = sinusoids(&SyntheticSpec {
        len: 2000,
        ..SyntheticSpec::default()
    })?;
    let data = Prepared::new(&raw, SplitScheme::STANDARD, 96, 24)?;
    let model = ModelConfig {
        lookback: 96,
        horizon: 24,
        dim: 16,
        registers: 4,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        epochs: 4,
        train_stride: 4,
        ..TrainConfig::default()
    };
    let grid = SweepGrid {
        layers: vec![1, 2, 3],
        patches: vec![8, 16],
        seeds: vec![2022, 2023, 2024],
    };
    let cells = run_sweep(&model, &train, &grid, |m, t| fit_and_test(m, t, &data));
    let rows: Vec<TableRow> = cells.iter().map(TableRow::from).collect();
    print!("{}", format_table(&rows));
    Ok(())
}
