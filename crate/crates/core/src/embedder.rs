//! Instance normalization, patching and the dual linear/convolutional patch embedding.

use log::debug;

use crate::error::{Error, Result};
use crate::layers::{join, Linear, INIT_STD};
use crate::numcore::{Bound, Init, ParamSpec, Padding, Real, Tape, Tensor, Var};

pub const REVIN_EPS: f64 = 1e-5;

/// Statistics of one univariate lookback, kept to invert the normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RevinState<T> {
    pub mean: T,
    /// `sqrt(var + eps)`, so never below `sqrt(eps)`.
    pub std: T,
}

pub fn revin_normalize<T: Real>(x: &[T]) -> (Vec<T>, RevinState<T>) {
    let n = T::of(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let std = (var + T::of(REVIN_EPS)).sqrt();
    (x.iter().map(|&v| (v - mean) / std).collect(), RevinState { mean, std })
}

/// Undo the learned affine (`gain`, `bias`), then the instance statistics.
pub fn revin_denormalize<T: Real>(y: &[T], state: RevinState<T>, gain: T, bias: T) -> Vec<T> {
    let g = gain + T::of(REVIN_EPS * REVIN_EPS);
    y.iter().map(|&v| (v - bias) / g * state.std + state.mean).collect()
}

/// Non-overlapping patches of a lookback window. A lookback that is not a multiple of
/// `patch_len` is left-padded with its first value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub lookback: usize,
    pub patch_len: usize,
}

impl PatchGrid {
    pub fn new(lookback: usize, patch_len: usize) -> Result<PatchGrid> {
        if lookback < 2 || patch_len == 0 {
            return Err(Error::Config(format!("invalid lookback {lookback} / patch_len {patch_len}")));
        }
        let grid = PatchGrid { lookback, patch_len };
        if grid.pad() > 0 {
            debug!("lookback {lookback} left-padded by {} to fill {} patches", grid.pad(), grid.n_patches());
        }
        Ok(grid)
    }

    pub fn n_patches(&self) -> usize {
        self.lookback.div_ceil(self.patch_len)
    }

    pub fn pad(&self) -> usize {
        self.n_patches() * self.patch_len - self.lookback
    }

    /// Row-major `[P, patch_len]` patches of `x` (length `lookback`).
    pub fn patchify<T: Real>(&self, x: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_patches() * self.patch_len);
        out.extend(std::iter::repeat_n(x[0], self.pad()));
        out.extend_from_slice(x);
        out
    }
}

/// RevIN-normalize every row of `x: [B, L]` and cut it into patches `[B, P, patch_len]`.
pub fn normalize_and_patch<T: Real>(x: &Tensor<T>, grid: PatchGrid) -> Result<(Tensor<T>, Vec<RevinState<T>>)> {
    if x.ndim() != 2 || x.shape()[1] != grid.lookback {
        return Err(Error::shape("normalize_and_patch", x.shape(), &[0, grid.lookback]));
    }
    let b = x.shape()[0];
    let mut data = Vec::with_capacity(b * grid.n_patches() * grid.patch_len);
    let mut states = Vec::with_capacity(b);
    for row in x.data().chunks(grid.lookback) {
        let (xn, st) = revin_normalize(row);
        data.extend(grid.patchify(&xn));
        states.push(st);
    }
    Ok((Tensor::new(&[b, grid.n_patches(), grid.patch_len], data)?, states))
}

/// Shared scalar affine applied after instance normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RevinAffine;

impl RevinAffine {
    pub fn specs(prefix: &str) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(join(prefix, "gain"), &[1], Init::Ones),
            ParamSpec::new(join(prefix, "bias"), &[1], Init::Zeros),
        ]
    }

    pub fn apply<T: Real>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let y = tape.mul(x, p.get(&join(prefix, "gain"))?)?;
        tape.add(y, p.get(&join(prefix, "bias"))?)
    }

    pub fn invert<T: Real>(tape: &mut Tape<T>, p: &Bound, prefix: &str, y: Var) -> Result<Var> {
        let shifted = tape.sub(y, p.get(&join(prefix, "bias"))?)?;
        let g = tape.add_scalar(p.get(&join(prefix, "gain"))?, T::of(REVIN_EPS * REVIN_EPS));
        tape.div(shifted, g)
    }
}

/// Restore instance statistics on `y: [B, H]` (one state per row).
pub fn denormalize_rows<T: Real>(tape: &mut Tape<T>, y: Var, states: &[RevinState<T>]) -> Result<Var> {
    let b = states.len();
    let std = tape.constant(Tensor::new(&[b, 1], states.iter().map(|s| s.std).collect())?);
    let mean = tape.constant(Tensor::new(&[b, 1], states.iter().map(|s| s.mean).collect())?);
    let scaled = tape.mul(y, std)?;
    tape.add(scaled, mean)
}

/// `x_d = patches·W + ConvPath(patches) + x_pos`, where ConvPath runs a same-padded
/// 1→dim convolution along each patch and mean-pools over its positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedder {
    pub patch_len: usize,
    pub n_patches: usize,
    pub dim: usize,
    pub kernel: usize,
}

impl Embedder {
    fn linear(&self) -> Linear {
        Linear::new(self.patch_len, self.dim, true)
    }

    pub fn specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut v = self.linear().specs(&join(prefix, "linear"));
        v.push(ParamSpec::new(
            join(prefix, "conv.weight"),
            &[self.dim, 1, self.kernel],
            Init::TruncNormal { std: INIT_STD },
        ));
        v.push(ParamSpec::new(join(prefix, "conv.bias"), &[self.dim], Init::Zeros));
        v.push(ParamSpec::new(
            join(prefix, "pos"),
            &[self.n_patches, self.dim],
            Init::TruncNormal { std: INIT_STD },
        ));
        v
    }

    /// `patches: [B, P, patch_len]` → `[B, P, dim]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, prefix: &str, patches: Var) -> Result<Var> {
        let shape = tape.shape(patches).to_vec();
        if shape.len() != 3 || shape[1] != self.n_patches || shape[2] != self.patch_len {
            return Err(Error::shape("embed", &shape, &[0, self.n_patches, self.patch_len]));
        }
        let b = shape[0];
        let lin = self.linear().forward(tape, p, &join(prefix, "linear"), patches)?;
        let flat = tape.reshape(patches, &[b * self.n_patches, 1, self.patch_len])?;
        let conv = tape.conv1d(
            flat,
            p.get(&join(prefix, "conv.weight"))?,
            Some(p.get(&join(prefix, "conv.bias"))?),
            Padding::Same,
            1,
        )?;
        let pooled = tape.mean_last(conv)?;
        let pooled = tape.reshape(pooled, &[b, self.n_patches, self.dim])?;
        let xe = tape.add(lin, pooled)?;
        tape.add(xe, p.get(&join(prefix, "pos"))?)
    }

    /// Multiply-accumulates for one univariate window.
    pub fn macs(&self) -> u64 {
        let lin = self.linear().macs(self.n_patches);
        let conv = (self.n_patches * self.dim * self.kernel * self.patch_len) as u64;
        lin + conv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_maps_to_zeros() {
        let (xn, st) = revin_normalize(&[5.0f64; 4]);
        assert!(xn.iter().all(|&v| v == 0.0));
        assert_eq!(st.mean, 5.0);
        assert!((st.std - REVIN_EPS.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn standardized_input_is_nearly_fixed() {
        let (xn, _) = revin_normalize(&[-1.0f64, 1.0]);
        assert!((xn[0] + 1.0).abs() < 1e-5 && (xn[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn denormalize_zeros_gives_mean() {
        let st = RevinState { mean: 3.0, std: 2.0 };
        assert!(revin_denormalize(&[0.0f64; 3], st, 1.0, 0.0).iter().all(|&v| (v - 3.0).abs() < 1e-9));
    }

    #[test]
    fn patch_rows_follow_time() {
        let g = PatchGrid::new(32, 16).unwrap();
        let x: Vec<f64> = (0..32).map(f64::from).collect();
        let p = g.patchify(&x);
        assert_eq!(g.n_patches(), 2);
        assert_eq!(p, x);
        let g = PatchGrid::new(512, 16).unwrap();
        assert_eq!((g.n_patches(), g.pad()), (32, 0));
    }

    #[test]
    fn ragged_lookback_is_left_padded_with_first_value() {
        let g = PatchGrid::new(5, 4).unwrap();
        assert_eq!(g.patchify(&[7.0f64, 1.0, 2.0, 3.0, 4.0]), vec![7.0, 7.0, 7.0, 7.0, 1.0, 2.0, 3.0, 4.0]);
    }
}
