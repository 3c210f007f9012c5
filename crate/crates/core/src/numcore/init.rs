//! Declarative parameter lists: shapes and initializers known before any tensor exists.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ParamStore, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with standard deviation `std`, redrawn outside `±2·std`.
    TruncNormal { std: f64 },
    /// Row-wise `ln(1), ln(2), …, ln(n)` over the last axis.
    LogRange,
    /// Inverse softplus of a step size drawn log-uniformly from `[min, max]`.
    InvSoftplus { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> ParamSpec {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn count(specs: &[ParamSpec]) -> usize {
    specs.iter().map(ParamSpec::numel).sum()
}

fn draw(init: Init, shape: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n: usize = shape.iter().product();
    match init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::TruncNormal { std } => {
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..n)
                .map(|_| loop {
                    let v: f64 = normal.sample(rng);
                    if v.abs() <= 2.0 * std {
                        break v;
                    }
                })
                .collect()
        }
        Init::LogRange => {
            let last = *shape.last().expect("non-empty shape");
            (0..n).map(|i| ((i % last + 1) as f64).ln()).collect()
        }
        Init::InvSoftplus { min, max } => (0..n)
            .map(|_| {
                let dt = rng.random_range(min.ln()..max.ln()).exp();
                // softplus(dt + ln(1 - e^-dt)) = dt
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect(),
    }
}

/// Materialize `specs` in declaration order from one seeded stream.
pub fn initialize<T: Real>(specs: &[ParamSpec], seed: u64) -> ParamStore<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for s in specs {
        let data = draw(s.init, &s.shape, &mut rng);
        let t = Tensor::new(&s.shape, data.into_iter().map(T::of).collect()).expect("spec shape");
        store.insert(s.name.clone(), t);
    }
    store
}
