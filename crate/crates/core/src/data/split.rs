use std::ops::Range;

use crate::error::{Error, Result};

/// How train/val/test borders are derived from the series length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitScheme {
    /// `floor(T·train)` train steps, `floor(T·test)` test steps, the rest validation.
    Ratio { train: f64, test: f64 },
    /// 12 months train, 4 months validation of 30-day months; the rest is test.
    EttMonths { steps_per_hour: usize },
}

impl SplitScheme {
    pub const STANDARD: SplitScheme = SplitScheme::Ratio { train: 0.7, test: 0.2 };
    pub const ETT_HOURLY: SplitScheme = SplitScheme::EttMonths { steps_per_hour: 1 };
    pub const ETT_15MIN: SplitScheme = SplitScheme::EttMonths { steps_per_hour: 4 };

    /// Scheme conventionally used for a dataset name (ETT* vs. everything else).
    pub fn for_dataset(name: &str) -> SplitScheme {
        let lower = name.to_ascii_lowercase();
        if lower.starts_with("etth") {
            Self::ETT_HOURLY
        } else if lower.starts_with("ettm") {
            Self::ETT_15MIN
        } else {
            Self::STANDARD
        }
    }

    pub fn name(&self) -> String {
        match self {
            SplitScheme::Ratio { train, test } => format!("ratio:{train}:{test}"),
            SplitScheme::EttMonths { steps_per_hour: 1 } => "ett_hourly".into(),
            SplitScheme::EttMonths { steps_per_hour: 4 } => "ett_15min".into(),
            SplitScheme::EttMonths { steps_per_hour } => format!("ett_months:{steps_per_hour}"),
        }
    }

    pub fn parse(s: &str) -> Result<SplitScheme> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("unknown split scheme {s:?}"));
        match parts.as_slice() {
            ["ratio"] => Ok(Self::STANDARD),
            ["ratio", tr, te] => Ok(SplitScheme::Ratio {
                train: tr.parse().map_err(|_| bad())?,
                test: te.parse().map_err(|_| bad())?,
            }),
            ["ett_hourly"] => Ok(Self::ETT_HOURLY),
            ["ett_15min"] => Ok(Self::ETT_15MIN),
            ["ett_months", sph] => Ok(SplitScheme::EttMonths {
                steps_per_hour: sph.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Split borders as timestamp indices: train `[0, train_end)`, val
/// `[train_end, val_end)`, test `[val_end, T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_end: usize,
    pub val_end: usize,
}

impl SplitSpec {
    pub fn from_scheme(scheme: SplitScheme, total: usize) -> Result<SplitSpec> {
        let spec = match scheme {
            SplitScheme::Ratio { train, test } => {
                if !(train > 0.0 && test > 0.0 && train + test < 1.0) {
                    return Err(Error::Config(format!("invalid split ratios {train}/{test}")));
                }
                let train_end = (total as f64 * train) as usize;
                let n_test = (total as f64 * test) as usize;
                SplitSpec {
                    train_end,
                    val_end: total - n_test,
                }
            }
            SplitScheme::EttMonths { steps_per_hour } => {
                let month = 30 * 24 * steps_per_hour;
                SplitSpec {
                    train_end: 12 * month,
                    val_end: 16 * month,
                }
            }
        };
        if !(0 < spec.train_end && spec.train_end < spec.val_end && spec.val_end < total) {
            return Err(Error::Split(format!(
                "borders {}/{} invalid for series of length {total}",
                spec.train_end, spec.val_end
            )));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Train,
    Val,
    Test,
}

/// Disjoint, ordered, covering ranges of target timestamps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn part(&self, part: Part) -> Range<usize> {
        match part {
            Part::Train => self.train.clone(),
            Part::Val => self.val.clone(),
            Part::Test => self.test.clone(),
        }
    }

    /// Range windows of `part` are drawn from: validation and test borrow `lookback`
    /// steps of context from the split before them.
    pub fn window_range(&self, part: Part, lookback: usize) -> Range<usize> {
        let r = self.part(part);
        match part {
            Part::Train => r,
            _ => r.start - lookback..r.end,
        }
    }
}

/// Cut `[0, total)` at the borders of `spec`, checking every part holds at least one
/// `(lookback, horizon)` window.
pub fn split(total: usize, spec: SplitSpec, lookback: usize, horizon: usize) -> Result<Splits> {
    if total < lookback + horizon {
        return Err(Error::Split(format!(
            "series of length {total} shorter than lookback {lookback} + horizon {horizon}"
        )));
    }
    if !(0 < spec.train_end && spec.train_end < spec.val_end && spec.val_end < total) {
        return Err(Error::Split(format!("invalid borders {spec:?} for length {total}")));
    }
    let splits = Splits {
        train: 0..spec.train_end,
        val: spec.train_end..spec.val_end,
        test: spec.val_end..total,
    };
    if splits.train.len() < lookback + horizon {
        return Err(Error::Split(format!(
            "train range {:?} too small for lookback {lookback} + horizon {horizon}",
            splits.train
        )));
    }
    for part in [Part::Val, Part::Test] {
        if splits.part(part).len() < horizon {
            return Err(Error::Split(format!(
                "{part:?} range {:?} shorter than horizon {horizon}",
                splits.part(part)
            )));
        }
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_split_of_thousand() {
        let spec = SplitSpec::from_scheme(SplitScheme::STANDARD, 1000).unwrap();
        let s = split(1000, spec, 32, 8).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..700, 700..800, 800..1000));
    }

    #[test]
    fn ett_borders_from_month_lengths() {
        let spec = SplitSpec::from_scheme(SplitScheme::ETT_HOURLY, 17420).unwrap();
        assert_eq!(spec.train_end, 12 * 30 * 24);
        assert_eq!(spec.val_end, 16 * 30 * 24);
        let s = split(17420, spec, 512, 96).unwrap();
        let windows = |r: Range<usize>| r.len() + 1 - 512 - 96;
        // origins whose targets start inside each part
        assert_eq!(windows(s.window_range(Part::Train, 512)), 8640 - 608 + 1);
        assert_eq!(windows(s.window_range(Part::Val, 512)), 2880 - 96 + 1);
        assert_eq!(windows(s.window_range(Part::Test, 512)), 17420 - 11520 - 96 + 1);
    }

    #[test]
    fn too_short_series_rejected() {
        let spec = SplitSpec {
            train_end: 100,
            val_end: 150,
        };
        assert!(matches!(split(200, spec, 512, 96), Err(Error::Split(_))));
        assert!(matches!(split(600, spec, 64, 96), Err(Error::Split(_))));
    }

    #[test]
    fn scheme_names_parse_back() {
        for s in [SplitScheme::STANDARD, SplitScheme::ETT_HOURLY, SplitScheme::ETT_15MIN] {
            assert_eq!(SplitScheme::parse(&s.name()).unwrap(), s);
        }
        assert_eq!(SplitScheme::for_dataset("ETTm2"), SplitScheme::ETT_15MIN);
        assert_eq!(SplitScheme::for_dataset("weather"), SplitScheme::STANDARD);
    }
}
