//! Small building blocks shared by the model components. Each layer is a plain
//! description (sizes only); its tensors live in a [`ParamStore`] under a name prefix.
//!
//! [`ParamStore`]: crate::numcore::ParamStore

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numcore::{Bound, Init, ParamSpec, Real, Tape, Tensor, Var};

pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `y = x·W (+ b)` with `W: [d_in, d_out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub d_in: usize,
    pub d_out: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, bias: bool) -> Linear {
        Linear { d_in, d_out, bias }
    }

    pub fn specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut v = vec![ParamSpec::new(
            join(prefix, "weight"),
            &[self.d_in, self.d_out],
            Init::TruncNormal { std: INIT_STD },
        )];
        if self.bias {
            v.push(ParamSpec::new(join(prefix, "bias"), &[self.d_out], Init::Zeros));
        }
        v
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.get(&join(prefix, "weight"))?)?;
        if self.bias {
            tape.add(y, p.get(&join(prefix, "bias"))?)
        } else {
            Ok(y)
        }
    }

    /// Multiply-accumulates for `rows` input rows.
    pub fn macs(&self, rows: usize) -> u64 {
        (rows * self.d_in * self.d_out) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub dim: usize,
}

impl LayerNorm {
    pub fn specs(&self, prefix: &str) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(join(prefix, "gain"), &[self.dim], Init::Ones),
            ParamSpec::new(join(prefix, "bias"), &[self.dim], Init::Zeros),
        ]
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let g = p.get(&join(prefix, "gain"))?;
        let b = p.get(&join(prefix, "bias"))?;
        tape.layer_norm(x, g, b, T::of(LN_EPS))
    }
}

/// Whether a forward pass trains (dropout active, drawn from a seeded stream) or evaluates.
#[derive(Debug, Clone)]
pub enum Mode {
    Eval,
    Train(ChaCha8Rng),
}

impl Mode {
    pub fn train(seed: u64) -> Mode {
        Mode::Train(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    /// Inverted-dropout multipliers (`0` or `1/(1-rate)`), or `None` when inactive.
    pub fn dropout_mask<T: Real>(&mut self, shape: &[usize], rate: f64) -> Option<Tensor<T>> {
        match self {
            Mode::Train(rng) if rate > 0.0 => {
                let keep = T::of(1.0 / (1.0 - rate));
                Some(Tensor::from_fn(shape, |_| if rng.random::<f64>() < rate { T::zero() } else { keep }))
            }
            _ => None,
        }
    }

    /// Apply dropout to `x` on the tape; identity when inactive.
    pub fn dropout<T: Real>(&mut self, tape: &mut Tape<T>, x: Var, rate: f64) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        match self.dropout_mask(&shape, rate) {
            Some(m) => {
                let m = tape.constant(m);
                tape.mul(x, m)
            }
            None => Ok(x),
        }
    }
}
