//! Per-patch fusion of the attention and Mamba branch outputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{join, Linear};
use crate::numcore::{Bound, Init, ParamSpec, Real, Tape, Var};

pub const RMS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    /// Learned per-patch weights on the raw branch outputs.
    #[default]
    ParallelTime,
    /// `0.5·(RMSNorm(att) + RMSNorm(mamba))`.
    Mean,
    /// `RMSNorm(att) + RMSNorm(mamba)`.
    Sum,
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionStrategy::ParallelTime => "paralleltime",
            FusionStrategy::Mean => "mean",
            FusionStrategy::Sum => "sum",
        })
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paralleltime" => Ok(FusionStrategy::ParallelTime),
            "mean" => Ok(FusionStrategy::Mean),
            "sum" => Ok(FusionStrategy::Sum),
            _ => Err(Error::Config(format!("unknown fusion strategy {s:?}"))),
        }
    }
}

/// Final activation of the weight network. Softmax couples the two weights to sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightActivation {
    #[default]
    Sigmoid,
    Softmax,
}

impl fmt::Display for WeightActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightActivation::Sigmoid => "sigmoid",
            WeightActivation::Softmax => "softmax",
        })
    }
}

impl FromStr for WeightActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(WeightActivation::Sigmoid),
            "softmax" => Ok(WeightActivation::Softmax),
            _ => Err(Error::Config(format!("unknown weight activation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Weighter {
    pub dim: usize,
    /// Compressed width per branch, `ceil(sqrt(dim))` by default.
    pub compressed: usize,
    pub hidden: usize,
    pub strategy: FusionStrategy,
    pub activation: WeightActivation,
}

/// `ceil(sqrt(dim))`, computed exactly on integers.
pub fn ceil_sqrt(dim: usize) -> usize {
    let mut c = (dim as f64).sqrt() as usize;
    while c * c < dim {
        c += 1;
    }
    while c > 1 && (c - 1) * (c - 1) >= dim {
        c -= 1;
    }
    c.max(1)
}

/// Output of a fusion: the fused tokens and, for the learned strategy, the
/// `[B, P, 2]` weights (`w_att`, `w_mamba`).
#[derive(Debug, Clone, Copy)]
pub struct Fused {
    pub out: Var,
    pub weights: Option<Var>,
}

impl Weighter {
    pub fn new(dim: usize, hidden: Option<usize>, strategy: FusionStrategy, activation: WeightActivation) -> Weighter {
        let c = ceil_sqrt(dim);
        Weighter {
            dim,
            compressed: c,
            hidden: hidden.unwrap_or(4 * c),
            strategy,
            activation,
        }
    }

    fn compress(&self) -> Linear {
        Linear::new(self.dim, self.compressed, false)
    }

    fn w1(&self) -> Linear {
        Linear::new(2 * self.compressed, self.hidden, true)
    }

    fn w2(&self) -> Linear {
        Linear::new(self.hidden, 2, true)
    }

    pub fn specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut v = vec![
            ParamSpec::new(join(prefix, "rms_att"), &[self.dim], Init::Ones),
            ParamSpec::new(join(prefix, "rms_mamba"), &[self.dim], Init::Ones),
        ];
        if self.strategy == FusionStrategy::ParallelTime {
            v.extend(self.compress().specs(&join(prefix, "w_att")));
            v.extend(self.compress().specs(&join(prefix, "w_mamba")));
            v.extend(self.w1().specs(&join(prefix, "w1")));
            // zero output layer: every weight starts at sigmoid(0) = 0.5
            v.push(ParamSpec::new(join(prefix, "w2.weight"), &[self.hidden, 2], Init::Zeros));
            v.push(ParamSpec::new(join(prefix, "w2.bias"), &[2], Init::Zeros));
        }
        v
    }

    /// Per-patch weights `[B, P, 2]` from the two branch outputs `[B, P, dim]`.
    pub fn compute_weights<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, prefix: &str, x_att: Var, x_mamba: Var) -> Result<Var> {
        let eps = T::of(RMS_EPS);
        let na = tape.rms_norm(x_att, p.get(&join(prefix, "rms_att"))?, eps)?;
        let nm = tape.rms_norm(x_mamba, p.get(&join(prefix, "rms_mamba"))?, eps)?;
        let ca = self.compress().forward(tape, p, &join(prefix, "w_att"), na)?;
        let cm = self.compress().forward(tape, p, &join(prefix, "w_mamba"), nm)?;
        let cat = tape.concat(&[ca, cm], 2)?;
        let h = self.w1().forward(tape, p, &join(prefix, "w1"), cat)?;
        let h = tape.relu(h);
        let logits = self.w2().forward(tape, p, &join(prefix, "w2"), h)?;
        Ok(match self.activation {
            WeightActivation::Sigmoid => tape.sigmoid(logits),
            WeightActivation::Softmax => tape.softmax_last(logits),
        })
    }

    pub fn fuse<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, prefix: &str, x_att: Var, x_mamba: Var) -> Result<Fused> {
        if tape.shape(x_att) != tape.shape(x_mamba) {
            return Err(Error::shape("fuse", tape.shape(x_att), tape.shape(x_mamba)));
        }
        match self.strategy {
            FusionStrategy::ParallelTime => {
                let w = self.compute_weights(tape, p, prefix, x_att, x_mamba)?;
                let wa = tape.slice(w, 2, 0, 1)?;
                let wm = tape.slice(w, 2, 1, 1)?;
                let a = tape.mul(x_att, wa)?;
                let m = tape.mul(x_mamba, wm)?;
                Ok(Fused {
                    out: tape.add(a, m)?,
                    weights: Some(w),
                })
            }
            FusionStrategy::Mean | FusionStrategy::Sum => {
                let eps = T::of(RMS_EPS);
                let na = tape.rms_norm(x_att, p.get(&join(prefix, "rms_att"))?, eps)?;
                let nm = tape.rms_norm(x_mamba, p.get(&join(prefix, "rms_mamba"))?, eps)?;
                let s = tape.add(na, nm)?;
                let out = if self.strategy == FusionStrategy::Mean { tape.scale(s, T::of(0.5)) } else { s };
                Ok(Fused { out, weights: None })
            }
        }
    }

    /// Multiply-accumulates for one univariate window of `n_patches` tokens.
    pub fn macs(&self, n_patches: usize) -> u64 {
        match self.strategy {
            FusionStrategy::ParallelTime => {
                2 * self.compress().macs(n_patches) + self.w1().macs(n_patches) + self.w2().macs(n_patches)
            }
            _ => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compressed_width_rounds_up() {
        assert_eq!(ceil_sqrt(128), 12);
        assert_eq!(ceil_sqrt(16), 4);
        assert_eq!(ceil_sqrt(17), 5);
        assert_eq!(ceil_sqrt(1), 1);
        let w = Weighter::new(128, None, FusionStrategy::ParallelTime, WeightActivation::Sigmoid);
        assert!(w.hidden > 2 * w.compressed);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [FusionStrategy::ParallelTime, FusionStrategy::Mean, FusionStrategy::Sum] {
            assert_eq!(s.to_string().parse::<FusionStrategy>().unwrap(), s);
        }
        assert!("max".parse::<FusionStrategy>().is_err());
    }
}
