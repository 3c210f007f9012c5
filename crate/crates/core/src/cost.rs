//! Analytic parameter and FLOP accounting, plus an instrumented cross-check.
//!
//! FLOPs are counted per univariate window: 2 FLOPs per multiply-accumulate over
//! matrix products, convolutions, attention score/value products on visible pairs,
//! and scan steps. A backward pass is charged twice the forward.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layers::Mode;
use crate::model::{ModelConfig, ParallelTime};
use crate::numcore::{flops, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub horizon: usize,
    pub fwd_flops: u64,
    pub fwd_bwd_flops: u64,
    pub params: usize,
}

pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    Ok(ParallelTime::new(cfg.clone())?.count_params())
}

/// Closed-form costs; no tensors are allocated.
pub fn count_flops(cfg: &ModelConfig) -> Result<CostReport> {
    let model = ParallelTime::new(cfg.clone())?;
    let fwd = 2 * model.macs();
    Ok(CostReport {
        horizon: cfg.horizon,
        fwd_flops: fwd,
        fwd_bwd_flops: 3 * fwd,
        params: model.count_params(),
    })
}

/// FLOPs of an actual single-window evaluation forward pass, from the kernel counters.
pub fn measure_forward_flops(cfg: &ModelConfig) -> Result<u64> {
    let model = ParallelTime::new(cfg.clone())?;
    let params = model.init::<f32>();
    let x = Tensor::from_fn(&[1, cfg.lookback], |i| (i as f32 * 0.37).sin());
    let (res, macs) = flops::measure(|| {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        model.forward(&mut tape, &p, &x, &mut Mode::Eval).map(|_| ())
    });
    res?;
    Ok(2 * macs)
}

/// Human-readable SI form (`8.41G`, `614.816K`).
pub fn si(v: f64) -> String {
    for (scale, suffix) in [(1e9, "G"), (1e6, "M"), (1e3, "K")] {
        if v.abs() >= scale {
            return format!("{:.3}{suffix}", v / scale);
        }
    }
    format!("{v}")
}
