//! Finite-difference check of a small model's gradients in f64.
//!
//! cargo run --release --example gradient_check

use paralleltime::layers::Mode;
use paralleltime::model::{ModelConfig, ParallelTime};
use paralleltime::numcore::{grad_check_params, Tensor};

fn main() -> anyhow::Result<()> {
    let model = ParallelTime::new(ModelConfig {
        lookback: 64,
        horizon: 8,
        patch_len: 16,
        dim: 8,
        heads: 2,
        registers: 2,
        d_state: 4,
        ..ModelConfig::default()
    })?;
    let params = model.init::<f64>();
    let x = Tensor::from_fn(&[2, 64], |i| (i as f64 * 0.37).sin() + 0.1 * (i % 5) as f64);
    let target = Tensor::from_fn(&[2, 8], |i| (i as f64 * 0.5).cos());

    let report = grad_check_params(
        |t, p| {
            let f = model.forward(t, p, &x, &mut Mode::Eval)?;
            let y = t.constant(target.clone());
            t.huber(f.pred, y, 1.0)
        },
        &params,
        1e-5,
        1e-4,
        Some(16),
    )?;
    println!("parameters:        {}", model.count_params());
    println!("coordinates probed: {}", report.checked);
    println!("relu kinks skipped: {}", report.excluded.len());
    println!("max relative error: {:.3e} at {:?}", report.max_rel_error, report.worst);
    println!("passed:             {}", report.passed());
    Ok(())
}
