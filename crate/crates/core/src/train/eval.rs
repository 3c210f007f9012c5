use serde::{Deserialize, Serialize};

use crate::data::{gather, plan_batches, BatchPlan, Part, Prepared};
use crate::error::{Error, Result};
use crate::numcore::{Real, Tensor};

/// Mean squared and absolute error over every `(window, variate)` row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    pub mae: f64,
    /// Number of univariate windows scored.
    pub windows: usize,
}

/// Running sums behind an [`EvalReport`].
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricAccumulator {
    se: f64,
    ae: f64,
    values: usize,
    windows: usize,
}

impl MetricAccumulator {
    pub fn add<T: Real>(&mut self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
        if pred.shape() != target.shape() {
            return Err(Error::shape("metrics", pred.shape(), target.shape()));
        }
        for (&p, &t) in pred.data().iter().zip(target.data()) {
            let e = p.as_f64() - t.as_f64();
            self.se += e * e;
            self.ae += e.abs();
        }
        self.values += pred.numel();
        self.windows += pred.shape()[0];
        Ok(())
    }

    pub fn finish(self) -> Result<EvalReport> {
        if self.values == 0 {
            return Err(Error::Split("no windows to evaluate".into()));
        }
        let n = self.values as f64;
        Ok(EvalReport {
            mse: self.se / n,
            mae: self.ae / n,
            windows: self.windows,
        })
    }
}

/// Score `predict` (`[rows, L]` → `[rows, H]`) on every window of `part`.
pub fn evaluate_with<T: Real>(
    data: &Prepared,
    part: Part,
    plan: &BatchPlan,
    mut predict: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<EvalReport> {
    let (l, h) = (data.lookback, data.horizon);
    let batches = plan_batches(data.data.n_vars(), data.range(part), l, h, plan, 0)?;
    let mut acc = MetricAccumulator::default();
    for b in &batches {
        let (x, y) = gather::<T>(&data.data, b, l, h)?;
        let p = predict(&x)?;
        acc.add(&p, &y)?;
    }
    acc.finish()
}

/// Forecast the last observed value for every step.
pub fn repeat_last<T: Real>(x: &Tensor<T>, horizon: usize) -> Result<Tensor<T>> {
    let l = x.shape()[1];
    let rows = x.shape()[0];
    Tensor::new(
        &[rows, horizon],
        x.data().chunks(l).flat_map(|r| std::iter::repeat_n(r[l - 1], horizon)).collect(),
    )
}

/// Repeat the last full season: step `t` copies `x[L - period + (t mod period)]`.
pub fn seasonal_naive<T: Real>(x: &Tensor<T>, horizon: usize, period: usize) -> Result<Tensor<T>> {
    let l = x.shape()[1];
    if period == 0 || period > l {
        return Err(Error::Config(format!("season period {period} outside 1..={l}")));
    }
    let rows = x.shape()[0];
    let data = x
        .data()
        .chunks(l)
        .flat_map(|r| (0..horizon).map(move |t| r[l - period + t % period]))
        .collect();
    Tensor::new(&[rows, horizon], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baselines_by_hand() {
        let x = Tensor::<f64>::from_f64(&[1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(repeat_last(&x, 3).unwrap().data(), &[5.0, 5.0, 5.0]);
        assert_eq!(seasonal_naive(&x, 5, 2).unwrap().data(), &[4.0, 5.0, 4.0, 5.0, 4.0]);
        assert!(seasonal_naive(&x, 2, 6).is_err());
    }

    #[test]
    fn accumulator_means() {
        let mut acc = MetricAccumulator::default();
        let p = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 0.0, 3.0, 5.0]).unwrap();
        acc.add(&p, &t).unwrap();
        let r = acc.finish().unwrap();
        assert_eq!((r.mse, r.mae, r.windows), (5.0 / 4.0, 3.0 / 4.0, 2));
        assert!(MetricAccumulator::default().finish().is_err());
    }
}
