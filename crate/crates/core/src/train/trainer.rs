use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::adam::{clip_global_norm, Adam};
use super::eval::{evaluate_with, EvalReport};
use crate::data::{gather, plan_batches, BatchPlan, Part, Prepared};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::ParallelTime;
use crate::numcore::{ParamStore, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Time origins per batch; every origin contributes one row per sampled variate.
    pub batch_size: usize,
    pub huber_delta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub variate_subsample: Option<usize>,
    pub val_subsample: Option<usize>,
    /// Keep every `train_stride`-th training origin.
    pub train_stride: usize,
    pub max_batches: Option<usize>,
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 1e-3,
            batch_size: 32,
            huber_delta: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: Some(5.0),
            variate_subsample: None,
            val_subsample: None,
            train_stride: 1,
            max_batches: None,
            eval_batch: 256,
            seed: 2023,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.huber_delta > 0.0) {
            return Err(Error::Config("lr and huber_delta must be positive".into()));
        }
        if self.batch_size == 0 || self.eval_batch == 0 || self.train_stride == 0 {
            return Err(Error::Config("batch sizes and stride must be positive".into()));
        }
        Ok(())
    }

    fn train_plan(&self) -> BatchPlan {
        BatchPlan {
            batch_size: self.batch_size,
            variate_subsample: self.variate_subsample,
            shuffle: true,
            seed: self.seed,
            stride: self.train_stride,
            max_batches: self.max_batches,
        }
    }

    pub fn val_plan(&self) -> BatchPlan {
        BatchPlan {
            variate_subsample: self.val_subsample,
            seed: self.seed,
            ..BatchPlan::eval(self.eval_batch)
        }
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: EvalReport,
    /// Parameters of the epoch with the lowest validation MSE.
    pub params: ParamStore<f32>,
}

/// Evaluation-mode score of `params` on `part`.
pub fn evaluate(model: &ParallelTime, params: &ParamStore<f32>, data: &Prepared, part: Part, plan: &BatchPlan) -> Result<EvalReport> {
    check_shapes(model, data)?;
    evaluate_with(data, part, plan, |x: &Tensor<f32>| model.predict(params, x))
}

fn check_shapes(model: &ParallelTime, data: &Prepared) -> Result<()> {
    if model.cfg.lookback != data.lookback || model.cfg.horizon != data.horizon {
        return Err(Error::Config(format!(
            "model expects lookback {} / horizon {}, data prepared for {} / {}",
            model.cfg.lookback, model.cfg.horizon, data.lookback, data.horizon
        )));
    }
    Ok(())
}

/// Non-finite values met while training mean the run diverged.
fn diverged(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Numeric { op, index } => Error::Divergence {
            epoch,
            step,
            msg: format!("non-finite {op} at index {index}"),
        },
        e => e,
    }
}

/// Fit `params` with Huber loss and Adam, keeping the best-validation parameters.
/// `on_epoch` sees every history record as soon as it is complete.
pub fn train(
    model: &ParallelTime,
    mut params: ParamStore<f32>,
    data: &Prepared,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    check_shapes(model, data)?;
    let (l, h) = (data.lookback, data.horizon);
    let mut opt = Adam::new(cfg.lr);
    opt.beta1 = cfg.beta1;
    opt.beta2 = cfg.beta2;
    opt.eps = cfg.adam_eps;
    let plan = cfg.train_plan();
    let val_plan = cfg.val_plan();
    let start = Instant::now();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, EvalReport, ParamStore<f32>)> = None;

    for epoch in 1..=cfg.epochs {
        let batches = plan_batches(data.data.n_vars(), data.range(Part::Train), l, h, &plan, epoch as u64)?;
        let mut loss_sum = 0.0;
        for (step, b) in batches.iter().enumerate() {
            let (x, y) = gather::<f32>(&data.data, b, l, h)?;
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let mut mode = Mode::train(cfg.seed ^ ((epoch as u64) << 32) ^ step as u64);
            let out = model.forward(&mut tape, &bound, &x, &mut mode).map_err(|e| diverged(e, epoch, step))?;
            let target = tape.constant(y);
            let loss = tape.huber(out.pred, target, cfg.huber_delta as f32)?;
            let lv = f64::from(tape.data(loss)[0]);
            if !lv.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    msg: format!("loss {lv}"),
                });
            }
            tape.backward(loss)?;
            let mut grads = bound.grads(&tape);
            drop(tape);
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            opt.step(&mut params, &grads).map_err(|e| diverged(e, epoch, step))?;
            loss_sum += lv;
        }
        let val = evaluate(model, &params, data, Part::Val, &val_plan).map_err(|e| diverged(e, epoch, batches.len()))?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val_mse: val.mse,
            val_mae: val.mae,
            wall_time: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: train {:.5} val mse {:.5} mae {:.5} ({:.1}s)",
            rec.train_loss, rec.val_mse, rec.val_mae, rec.wall_time
        );
        on_epoch(&rec);
        history.push(rec);
        if best.as_ref().is_none_or(|(_, b, _)| val.mse < b.mse) {
            best = Some((epoch, val, params.clone()));
        }
    }
    let (best_epoch, best_val, params) = best.expect("at least one epoch");
    Ok(TrainReport {
        history,
        best_epoch,
        best_val,
        params,
    })
}
