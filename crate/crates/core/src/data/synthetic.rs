use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::TimeSeriesDataset;
use crate::error::Result;

/// A multivariate sum of sinusoids with Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_vars: usize,
    pub len: usize,
    /// Every variate mixes all of these periods with its own amplitudes and phases.
    pub periods: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_vars: 4,
            len: 4000,
            periods: vec![24.0, 50.0, 168.0],
            noise_std: 0.3,
            seed: 2024,
        }
    }
}

pub fn sinusoids(spec: &SyntheticSpec) -> Result<TimeSeriesDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("finite std");
    let mut variates = Vec::with_capacity(spec.n_vars);
    for _ in 0..spec.n_vars {
        let comps: Vec<(f64, f64, f64)> = spec
            .periods
            .iter()
            .map(|&p| (rng.random_range(0.5..1.5), rng.random_range(0.0..std::f64::consts::TAU), p))
            .collect();
        let level: f64 = rng.random_range(-1.0..1.0);
        let series = (0..spec.len)
            .map(|t| {
                let tf = t as f64;
                let s: f64 = comps
                    .iter()
                    .map(|&(a, ph, p)| a * (std::f64::consts::TAU * tf / p + ph).sin())
                    .sum();
                level + s + noise.sample(&mut rng)
            })
            .collect();
        variates.push(series);
    }
    TimeSeriesDataset::from_variates("synthetic", variates)
}
