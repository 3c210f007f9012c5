//! The work behind each command-line subcommand. Every command writes its outputs
//! under `run.out_dir` and returns a JSON summary for the terminal.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::cost::{count_flops, CostReport};
use crate::data::{Part, Prepared, TimeSeriesDataset};
use crate::error::Result;
use crate::export::{layer_means, patch_weights, sample_lookback, write_layer_means_csv, write_weight_csv};
use crate::model::{ModelConfig, ParallelTime};
use crate::numcore::Tensor;
use crate::sweep::{format_table, run_sweep, SweepGrid, TableRow};
use crate::train::{evaluate, evaluate_with, repeat_last, seasonal_naive, train, EvalReport, TrainConfig};

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.run.out_dir);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.ini"), cfg.to_ini())?;
    Ok(dir)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| crate::Error::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn prepare(cfg: &RunConfig, ds: &TimeSeriesDataset, lookback: usize, horizon: usize) -> Result<Prepared> {
    Prepared::new(ds, cfg.data.split_scheme(ds)?, lookback, horizon)
}

/// Repeat-last and seasonal-naive scores on the test split.
pub fn baselines(data: &Prepared, cfg: &TrainConfig, season: usize) -> Result<(EvalReport, EvalReport)> {
    let plan = crate::data::BatchPlan::eval(cfg.eval_batch);
    let h = data.horizon;
    let last = evaluate_with(data, Part::Test, &plan, |x: &Tensor<f32>| repeat_last(x, h))?;
    let seasonal = evaluate_with(data, Part::Test, &plan, |x: &Tensor<f32>| seasonal_naive(x, h, season))?;
    Ok((last, seasonal))
}

/// Train and test one model configuration; returns the test report.
pub fn fit_and_test(model_cfg: &ModelConfig, train_cfg: &TrainConfig, data: &Prepared) -> Result<EvalReport> {
    let model = ParallelTime::new(model_cfg.clone())?;
    let report = train(&model, model.init(), data, train_cfg, |_| {})?;
    evaluate(&model, &report.params, data, Part::Test, &crate::data::BatchPlan::eval(train_cfg.eval_batch))
}

/// Train one model per configured horizon.
pub fn cmd_train(cfg: &RunConfig) -> Result<Value> {
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    let ds = cfg.data.load()?;
    let mut results = Vec::new();
    for &h in &cfg.data.horizons {
        let model_cfg = cfg.model_for(h);
        let data = prepare(cfg, &ds, model_cfg.lookback, h)?;
        let model = ParallelTime::new(model_cfg)?;
        let sub = dir.join(format!("h{h}"));
        fs::create_dir_all(&sub)?;
        let mut history = fs::File::create(sub.join("history.jsonl"))?;
        let mut write_err = None;
        let report = train(&model, model.init(), &data, &cfg.train, |rec| {
            let line = serde_json::to_string(rec).expect("record serializes");
            if let Err(e) = writeln!(history, "{line}").and_then(|_| history.flush()) {
                write_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = write_err {
            return Err(e.into());
        }
        checkpoint::save(sub.join("checkpoint.ptck"), &model.cfg, &report.params)?;
        let test = evaluate(&model, &report.params, &data, Part::Test, &crate::data::BatchPlan::eval(cfg.train.eval_batch))?;
        let (last, seasonal) = baselines(&data, &cfg.train, cfg.run.season_period)?;
        let summary = json!({
            "horizon": h,
            "params": model.count_params(),
            "best_epoch": report.best_epoch,
            "best_val": report.best_val,
            "test": test,
            "baseline_repeat_last": last,
            "baseline_seasonal_naive": seasonal,
        });
        write_json(&sub.join("metrics.json"), &summary)?;
        results.push(summary);
    }
    Ok(json!({ "command": "train", "out_dir": dir, "results": results }))
}

/// Evaluate a checkpoint on the test split of the configured dataset.
pub fn cmd_eval(cfg: &RunConfig, ckpt: &Path) -> Result<Value> {
    let dir = out_dir(cfg)?;
    let (model, params) = checkpoint::load::<f32>(ckpt)?;
    let ds = cfg.data.load()?;
    let data = prepare(cfg, &ds, model.cfg.lookback, model.cfg.horizon)?;
    let test = evaluate(&model, &params, &data, Part::Test, &crate::data::BatchPlan::eval(cfg.train.eval_batch))?;
    let (last, seasonal) = baselines(&data, &cfg.train, cfg.run.season_period)?;
    let summary = json!({
        "command": "eval",
        "checkpoint": ckpt,
        "horizon": model.cfg.horizon,
        "test": test,
        "baseline_repeat_last": last,
        "baseline_seasonal_naive": seasonal,
    });
    write_json(&dir.join("eval.json"), &summary)?;
    Ok(summary)
}

/// Analytic costs for every configured horizon.
pub fn cmd_count_flops(cfg: &RunConfig) -> Result<Value> {
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    let reports: Vec<CostReport> = cfg
        .data
        .horizons
        .iter()
        .map(|&h| count_flops(&cfg.model_for(h)))
        .collect::<Result<_>>()?;
    write_json(&dir.join("costs.json"), &reports)?;
    Ok(json!({ "command": "count-flops", "head": cfg.model.head, "reports": reports }))
}

/// Per-patch weights of one test sample, and per-layer means over a split.
pub fn cmd_export_weights(cfg: &RunConfig, ckpt: &Path, sample: usize, part: Part) -> Result<Value> {
    let dir = out_dir(cfg)?;
    let (model, params) = checkpoint::load::<f32>(ckpt)?;
    let ds = cfg.data.load()?;
    let data = prepare(cfg, &ds, model.cfg.lookback, model.cfg.horizon)?;
    let x = sample_lookback(&data, Part::Test, sample)?;
    let rows = patch_weights(&model, &params, &x)?;
    let patch_path = dir.join(format!("patch_weights_{sample}.csv"));
    write_weight_csv(fs::File::create(&patch_path)?, &rows)?;
    let means = layer_means(&model, &params, &data, part, &crate::data::BatchPlan::eval(cfg.train.eval_batch))?;
    let means_path = dir.join(format!("layer_means_{}.csv", format!("{part:?}").to_lowercase()));
    write_layer_means_csv(fs::File::create(&means_path)?, &means)?;
    Ok(json!({
        "command": "export-weights",
        "patch_weights": patch_path,
        "layer_means": means_path,
        "means": means,
    }))
}

/// Layers × patch lengths × seeds grid on the first configured horizon.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Value> {
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    let ds = cfg.data.load()?;
    let h = cfg.data.horizons[0];
    let model_cfg = cfg.model_for(h);
    let data = prepare(cfg, &ds, model_cfg.lookback, h)?;
    let grid = SweepGrid {
        layers: cfg.run.sweep_layers.clone(),
        patches: cfg.run.sweep_patches.clone(),
        seeds: cfg.run.sweep_seeds.clone(),
    };
    let cells = run_sweep(&model_cfg, &cfg.train, &grid, |m, t| fit_and_test(m, t, &data));
    let rows: Vec<TableRow> = cells.iter().map(TableRow::from).collect();
    let table = format_table(&rows);
    fs::write(dir.join("sweep.tsv"), &table)?;
    write_json(&dir.join("sweep.json"), &cells)?;
    Ok(json!({ "command": "sweep", "horizon": h, "table": table, "cells": cells }))
}
