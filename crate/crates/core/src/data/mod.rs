//! Loading, splitting, scaling and windowing multivariate series.

mod dataset;
mod prepared;
mod scaler;
mod split;
pub mod synthetic;
mod windows;

pub use dataset::{load_csv, parse_csv, CsvSchema, DateColumn, LoadReport, TimeSeriesDataset};
pub use prepared::Prepared;
pub use scaler::Standardizer;
pub use split::{split, Part, SplitScheme, SplitSpec, Splits};
pub use synthetic::{sinusoids, SyntheticSpec};
pub use windows::{gather, origins, plan_batches, BatchIndex, BatchPlan};
