use std::ops::Range;

use super::{split, Part, SplitScheme, SplitSpec, Splits, Standardizer, TimeSeriesDataset};
use crate::error::Result;

/// A dataset standardized with train statistics and cut into splits for one
/// `(lookback, horizon)` setting.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: TimeSeriesDataset,
    pub splits: Splits,
    pub scaler: Standardizer,
    pub lookback: usize,
    pub horizon: usize,
}

impl Prepared {
    pub fn new(raw: &TimeSeriesDataset, scheme: SplitScheme, lookback: usize, horizon: usize) -> Result<Prepared> {
        let spec = SplitSpec::from_scheme(scheme, raw.len())?;
        let splits = split(raw.len(), spec, lookback, horizon)?;
        let scaler = Standardizer::fit(raw, splits.train.clone())?;
        let mut data = raw.clone();
        scaler.transform(&mut data)?;
        Ok(Prepared {
            data,
            splits,
            scaler,
            lookback,
            horizon,
        })
    }

    /// Timestamps windows of `part` are drawn from, including borrowed lookback context.
    pub fn range(&self, part: Part) -> Range<usize> {
        self.splits.window_range(part, self.lookback)
    }
}
