use std::ops::Range;

use super::TimeSeriesDataset;
use crate::error::{Error, Result};

/// Per-variate standardization with statistics taken from one range (the train split).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit on `ds[.., range]`. A constant variate gets std 1 so it maps to zeros.
    pub fn fit(ds: &TimeSeriesDataset, range: Range<usize>) -> Result<Standardizer> {
        if range.is_empty() || range.end > ds.len() {
            return Err(Error::Split(format!("cannot fit scaler on {range:?} of length {}", ds.len())));
        }
        let n = range.len() as f64;
        let mut mean = Vec::with_capacity(ds.n_vars());
        let mut std = Vec::with_capacity(ds.n_vars());
        for v in 0..ds.n_vars() {
            let xs = &ds.variate(v)[range.clone()];
            let m = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Ok(Standardizer { mean, std })
    }

    pub fn transform(&self, ds: &mut TimeSeriesDataset) -> Result<()> {
        if ds.n_vars() != self.mean.len() {
            return Err(Error::Contract(format!(
                "scaler fitted on {} variates, dataset has {}",
                self.mean.len(),
                ds.n_vars()
            )));
        }
        for v in 0..ds.n_vars() {
            let (m, s) = (self.mean[v], self.std[v]);
            ds.variate_mut(v).iter_mut().for_each(|x| *x = (*x - m) / s);
        }
        Ok(())
    }

    pub fn inverse(&self, variate: usize, x: f64) -> f64 {
        x * self.std[variate] + self.mean[variate]
    }
}
