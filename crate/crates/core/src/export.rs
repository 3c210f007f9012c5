//! Per-patch and per-layer branch-weight exports.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::{gather, plan_batches, BatchIndex, BatchPlan, Part, Prepared};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::ParallelTime;
use crate::numcore::{ParamStore, Real, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub layer: usize,
    pub patch_index: usize,
    pub w_att: f64,
    pub w_mamba: f64,
}

/// Per-layer weight tensors (`[B, P, 2]` each) of one evaluation forward pass.
pub fn branch_weights<T: Real>(model: &ParallelTime, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape);
    let f = model.forward(&mut tape, &p, x, &mut Mode::Eval)?;
    if f.weights.is_empty() {
        return Err(Error::Config(format!(
            "fusion strategy {} has no learned weights",
            model.cfg.fusion
        )));
    }
    Ok(f.weights.iter().map(|&w| tape.value(w).clone()).collect())
}

/// Weights of one lookback `x: [L]`, one row per `(layer, patch)`.
pub fn patch_weights<T: Real>(model: &ParallelTime, params: &ParamStore<T>, x: &[T]) -> Result<Vec<WeightRow>> {
    let x = Tensor::new(&[1, x.len()], x.to_vec())?;
    let mut rows = Vec::new();
    for (layer, w) in branch_weights(model, params, &x)?.iter().enumerate() {
        for (patch_index, pair) in w.data().chunks(2).enumerate() {
            rows.push(WeightRow {
                layer,
                patch_index,
                w_att: pair[0].as_f64(),
                w_mamba: pair[1].as_f64(),
            });
        }
    }
    Ok(rows)
}

/// The `sample`-th window of `part` (origin-major, then variate) as a lookback.
pub fn sample_lookback(data: &Prepared, part: Part, sample: usize) -> Result<Vec<f32>> {
    let n_vars = data.data.n_vars();
    let origins = crate::data::origins(data.range(part), data.lookback, data.horizon);
    let total = origins.len() * n_vars;
    if sample >= total {
        return Err(Error::Contract(format!("sample {sample} out of range: {part:?} split has {total} windows")));
    }
    let batch = BatchIndex {
        origins: vec![origins.start + sample / n_vars],
        variates: vec![sample % n_vars],
    };
    Ok(gather::<f32>(&data.data, &batch, data.lookback, data.horizon)?.0.into_data())
}

pub fn write_weight_csv(w: impl Write, rows: &[WeightRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_weight_csv(r: impl Read) -> Result<Vec<WeightRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Format(e.to_string())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerMean {
    pub layer: usize,
    pub w_att: f64,
    pub w_mamba: f64,
    /// Tokens averaged: windows × patches.
    pub tokens: usize,
}

/// Mean weights over every token of every window of `part`.
pub fn layer_means(model: &ParallelTime, params: &ParamStore<f32>, data: &Prepared, part: Part, plan: &BatchPlan) -> Result<Vec<LayerMean>> {
    let batches = plan_batches(data.data.n_vars(), data.range(part), data.lookback, data.horizon, plan, 0)?;
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    for b in &batches {
        let (x, _) = gather::<f32>(&data.data, b, data.lookback, data.horizon)?;
        for (layer, w) in branch_weights(model, params, &x)?.iter().enumerate() {
            if sums.len() <= layer {
                sums.push((0.0, 0.0, 0));
            }
            let s = &mut sums[layer];
            for pair in w.data().chunks(2) {
                s.0 += f64::from(pair[0]);
                s.1 += f64::from(pair[1]);
                s.2 += 1;
            }
        }
    }
    if sums.is_empty() {
        return Err(Error::Split(format!("{part:?} split is empty")));
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(layer, (a, m, n))| LayerMean {
            layer,
            w_att: a / n as f64,
            w_mamba: m / n as f64,
            tokens: n,
        })
        .collect())
}

pub fn write_layer_means_csv(w: impl Write, rows: &[LayerMean]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![
            WeightRow {
                layer: 0,
                patch_index: 3,
                w_att: 0.1 + 0.2,
                w_mamba: f64::from(0.7_f32),
            },
            WeightRow {
                layer: 1,
                patch_index: 0,
                w_att: 1e-300,
                w_mamba: 0.5,
            },
        ];
        let mut buf = Vec::new();
        write_weight_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("layer,patch_index,w_att,w_mamba\n"));
        assert_eq!(read_weight_csv(buf.as_slice()).unwrap(), rows);
    }
}
