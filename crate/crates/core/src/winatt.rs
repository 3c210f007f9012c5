//! Causal windowed multi-head attention over patch tokens prefixed by learnable
//! register tokens.

use crate::error::{Error, Result};
use crate::layers::{join, Linear, Mode, INIT_STD};
use crate::numcore::{Bound, Init, ParamSpec, Real, Tape, Var};

/// Row-major visibility over `R` registers followed by `P` patches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnMask {
    pub registers: usize,
    pub patches: usize,
    pub visible: Vec<bool>,
}

impl AttnMask {
    pub fn size(&self) -> usize {
        self.registers + self.patches
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.visible[row * self.size() + col]
    }

    /// The `[P, R+P]` block of rows belonging to patch queries.
    pub fn patch_rows(&self) -> &[bool] {
        &self.visible[self.registers * self.size()..]
    }
}

/// Patch `i` sees every register and patches `max(0, i-S+1)..=i`; register `r`
/// sees registers `0..=r` and no patch.
pub fn build_mask(patches: usize, registers: usize, window: usize) -> Result<AttnMask> {
    if patches == 0 || window == 0 {
        return Err(Error::Config(format!("mask needs P ≥ 1 and S ≥ 1 (got P={patches}, S={window})")));
    }
    let n = registers + patches;
    let mut visible = vec![false; n * n];
    for r in 0..registers {
        for c in 0..=r {
            visible[r * n + c] = true;
        }
    }
    for i in 0..patches {
        let row = (registers + i) * n;
        for c in 0..registers {
            visible[row + c] = true;
        }
        for q in (i + 1).saturating_sub(window)..=i {
            visible[row + registers + q] = true;
        }
    }
    Ok(AttnMask {
        registers,
        patches,
        visible,
    })
}

/// Window length from the 1:9 window-to-patches ratio, `max(1, ceil(P/9))`.
pub fn window_from_ratio(patches: usize) -> usize {
    patches.div_ceil(9).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowedAttention {
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
    pub registers: usize,
    pub n_patches: usize,
    pub dropout: f64,
}

impl WindowedAttention {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn proj(&self) -> Linear {
        Linear::new(self.dim, self.dim, true)
    }

    pub fn specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut v = Vec::new();
        for name in ["q", "k", "v", "o"] {
            v.extend(self.proj().specs(&join(prefix, name)));
        }
        if self.registers > 0 {
            v.push(ParamSpec::new(
                join(prefix, "registers"),
                &[self.registers, self.dim],
                Init::TruncNormal { std: INIT_STD },
            ));
        }
        v
    }

    pub fn mask(&self) -> Result<AttnMask> {
        build_mask(self.n_patches, self.registers, self.window)
    }

    /// `[.., T, dim]` → `[.., heads, T, head_dim]`.
    fn split_heads<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let mut shape = tape.shape(x).to_vec();
        let t = shape.len();
        shape.pop();
        shape.extend_from_slice(&[self.heads, self.head_dim()]);
        let x = tape.reshape(x, &shape)?;
        let mut perm: Vec<usize> = (0..t - 2).collect();
        perm.extend_from_slice(&[t - 1, t - 2, t]);
        tape.permute(x, &perm)
    }

    /// `x: [B, P, dim]` → `[B, P, dim]`; register rows are not returned.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var, mode: &mut Mode) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.n_patches || shape[2] != self.dim {
            return Err(Error::shape("windowed_attention", &shape, &[0, self.n_patches, self.dim]));
        }
        let b = shape[0];
        let (h, hd, r, np) = (self.heads, self.head_dim(), self.registers, self.n_patches);
        let proj = self.proj();
        let q = proj.forward(tape, p, &join(prefix, "q"), x)?;
        let k = proj.forward(tape, p, &join(prefix, "k"), x)?;
        let v = proj.forward(tape, p, &join(prefix, "v"), x)?;
        let q = self.split_heads(tape, q)?;
        let mut k = self.split_heads(tape, k)?;
        let mut v = self.split_heads(tape, v)?;
        if r > 0 {
            let reg = p.get(&join(prefix, "registers"))?;
            let mut kv = [k, v];
            for (name, dst) in ["k", "v"].into_iter().zip(kv.iter_mut()) {
                let rp = proj.forward(tape, p, &join(prefix, name), reg)?;
                let rp = self.split_heads(tape, rp)?;
                let rp = tape.expand(rp, &[b, h, r, hd])?;
                *dst = tape.concat(&[rp, *dst], 2)?;
            }
            [k, v] = kv;
        }
        let mask = self.mask()?;
        let drop = mode.dropout_mask(&[b, h, np, r + np], self.dropout);
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let att = tape.masked_attention(q, k, v, mask.patch_rows(), scale, drop)?;
        let att = tape.permute(att, &[0, 2, 1, 3])?;
        let att = tape.reshape(att, &[b, np, self.dim])?;
        proj.forward(tape, p, &join(prefix, "o"), att)
    }

    /// Multiply-accumulates for one univariate window: Q/K/V/O projections of the
    /// patches, K/V projections of the registers, and both attention products over
    /// visible pairs only.
    pub fn macs(&self) -> u64 {
        let proj = self.proj();
        let pairs = (0..self.n_patches)
            .map(|i| self.registers + self.window.min(i + 1))
            .sum::<usize>();
        4 * proj.macs(self.n_patches) + 2 * proj.macs(self.registers) + (2 * pairs * self.dim) as u64
    }
}
