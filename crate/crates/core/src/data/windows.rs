use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::numcore::{Real, Tensor};

/// Origins `o` in `range` such that `[o, o+lookback+horizon)` stays inside `range`.
/// The input window is `[o, o+lookback)` and the target `[o+lookback, o+lookback+horizon)`.
pub fn origins(range: Range<usize>, lookback: usize, horizon: usize) -> Range<usize> {
    let need = lookback + horizon;
    if range.len() < need {
        return range.start..range.start;
    }
    range.start..range.end - need + 1
}

/// How windows of one split are grouped into batches.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    /// Time origins per batch; each origin contributes one row per sampled variate.
    pub batch_size: usize,
    /// Draw this many variates per batch without replacement (train only).
    pub variate_subsample: Option<usize>,
    pub shuffle: bool,
    pub seed: u64,
    /// Keep every `stride`-th origin.
    pub stride: usize,
    pub max_batches: Option<usize>,
}

impl BatchPlan {
    /// Every origin and variate, in order.
    pub fn eval(batch_size: usize) -> BatchPlan {
        BatchPlan {
            batch_size,
            variate_subsample: None,
            shuffle: false,
            seed: 0,
            stride: 1,
            max_batches: None,
        }
    }
}

/// One batch: rows are `(origin, variate)` pairs, origin-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchIndex {
    pub origins: Vec<usize>,
    pub variates: Vec<usize>,
}

impl BatchIndex {
    pub fn rows(&self) -> usize {
        self.origins.len() * self.variates.len()
    }
}

/// Batches for one pass over `range`. Shuffling and variate sampling are seeded by
/// `plan.seed` and `epoch`, so reruns see identical batches.
pub fn plan_batches(
    n_vars: usize,
    range: Range<usize>,
    lookback: usize,
    horizon: usize,
    plan: &BatchPlan,
    epoch: u64,
) -> Result<Vec<BatchIndex>> {
    if plan.batch_size == 0 || plan.stride == 0 {
        return Err(Error::Config("batch_size and stride must be positive".into()));
    }
    if let Some(k) = plan.variate_subsample {
        if k == 0 || k > n_vars {
            return Err(Error::Config(format!("variate subsample {k} outside 1..={n_vars}")));
        }
    }
    let mut all: Vec<usize> = origins(range.clone(), lookback, horizon).step_by(plan.stride).collect();
    if all.is_empty() {
        return Err(Error::Split(format!(
            "range {range:?} holds no window of lookback {lookback} + horizon {horizon}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    if plan.shuffle {
        all.shuffle(&mut rng);
    }
    let mut out = Vec::new();
    for chunk in all.chunks(plan.batch_size) {
        if plan.max_batches.is_some_and(|m| out.len() >= m) {
            break;
        }
        let variates = match plan.variate_subsample {
            Some(k) if k < n_vars => {
                let mut vs = rand::seq::index::sample(&mut rng, n_vars, k).into_vec();
                vs.sort_unstable();
                vs
            }
            _ => (0..n_vars).collect(),
        };
        out.push(BatchIndex {
            origins: chunk.to_vec(),
            variates,
        });
    }
    Ok(out)
}

/// Gather `[rows, lookback]` inputs and `[rows, horizon]` targets for a batch.
pub fn gather<T: Real>(
    ds: &TimeSeriesDataset,
    batch: &BatchIndex,
    lookback: usize,
    horizon: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let rows = batch.rows();
    let mut x = Vec::with_capacity(rows * lookback);
    let mut y = Vec::with_capacity(rows * horizon);
    for &o in &batch.origins {
        if o + lookback + horizon > ds.len() {
            return Err(Error::Split(format!("origin {o} runs past series end {}", ds.len())));
        }
        for &v in &batch.variates {
            let s = ds.variate(v);
            x.extend(s[o..o + lookback].iter().map(|&a| T::of(a)));
            y.extend(s[o + lookback..o + lookback + horizon].iter().map(|&a| T::of(a)));
        }
    }
    Ok((Tensor::new(&[rows, lookback], x)?, Tensor::new(&[rows, horizon], y)?))
}
