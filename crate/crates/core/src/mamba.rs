//! Selective state-space branch: in-projection, causal depthwise convolution,
//! input-dependent discretized scan, SiLU gate and out-projection.

use crate::error::{Error, Result};
use crate::layers::{join, Linear, INIT_STD};
use crate::numcore::{Bound, Init, ParamSpec, Padding, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mamba {
    pub dim: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub expand: usize,
}

impl Mamba {
    pub fn d_inner(&self) -> usize {
        self.expand * self.dim
    }

    /// Width of the low-rank step-size projection, `ceil(dim / 16)`.
    pub fn dt_rank(&self) -> usize {
        self.dim.div_ceil(16)
    }

    fn in_proj(&self) -> Linear {
        Linear::new(self.dim, 2 * self.d_inner(), false)
    }

    fn x_proj(&self) -> Linear {
        Linear::new(self.d_inner(), self.dt_rank() + 2 * self.d_state, false)
    }

    fn dt_proj(&self) -> Linear {
        Linear::new(self.dt_rank(), self.d_inner(), true)
    }

    fn out_proj(&self) -> Linear {
        Linear::new(self.d_inner(), self.dim, false)
    }

    pub fn specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let di = self.d_inner();
        let mut v = self.in_proj().specs(&join(prefix, "in_proj"));
        v.push(ParamSpec::new(
            join(prefix, "conv.weight"),
            &[di, 1, self.d_conv],
            Init::TruncNormal { std: INIT_STD },
        ));
        v.push(ParamSpec::new(join(prefix, "conv.bias"), &[di], Init::Zeros));
        v.extend(self.x_proj().specs(&join(prefix, "x_proj")));
        v.push(ParamSpec::new(
            join(prefix, "dt_proj.weight"),
            &[self.dt_rank(), di],
            Init::TruncNormal { std: INIT_STD },
        ));
        v.push(ParamSpec::new(
            join(prefix, "dt_proj.bias"),
            &[di],
            Init::InvSoftplus { min: 1e-3, max: 0.1 },
        ));
        v.push(ParamSpec::new(join(prefix, "a_log"), &[di, self.d_state], Init::LogRange));
        v.push(ParamSpec::new(join(prefix, "d"), &[di], Init::Ones));
        v.extend(self.out_proj().specs(&join(prefix, "out_proj")));
        v
    }

    /// `x: [B, P, dim]` → `[B, P, dim]`, causal along `P`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.dim {
            return Err(Error::shape("mamba", &shape, &[0, 0, self.dim]));
        }
        let (di, n, r) = (self.d_inner(), self.d_state, self.dt_rank());
        let xz = self.in_proj().forward(tape, p, &join(prefix, "in_proj"), x)?;
        let xs = tape.slice(xz, 2, 0, di)?;
        let z = tape.slice(xz, 2, di, di)?;

        let xt = tape.permute(xs, &[0, 2, 1])?;
        let conv = tape.conv1d(
            xt,
            p.get(&join(prefix, "conv.weight"))?,
            Some(p.get(&join(prefix, "conv.bias"))?),
            Padding::Causal,
            di,
        )?;
        let conv = tape.permute(conv, &[0, 2, 1])?;
        let u = tape.silu(conv);

        let dbc = self.x_proj().forward(tape, p, &join(prefix, "x_proj"), u)?;
        let dt_in = tape.slice(dbc, 2, 0, r)?;
        let bm = tape.slice(dbc, 2, r, n)?;
        let cm = tape.slice(dbc, 2, r + n, n)?;
        let dt = self.dt_proj().forward(tape, p, &join(prefix, "dt_proj"), dt_in)?;
        let delta = tape.softplus(dt);
        let a_log = p.get(&join(prefix, "a_log"))?;
        let a = tape.exp(a_log);
        let a = tape.neg(a);
        let y = tape.selective_scan(u, delta, a, bm, cm, p.get(&join(prefix, "d"))?)?;

        let gate = tape.silu(z);
        let y = tape.mul(y, gate)?;
        self.out_proj().forward(tape, p, &join(prefix, "out_proj"), y)
    }

    /// Multiply-accumulates for one univariate window of `n_patches` tokens.
    pub fn macs(&self, n_patches: usize) -> u64 {
        let di = self.d_inner();
        let conv = (n_patches * di * self.d_conv) as u64;
        let scan = (n_patches * di * (3 * self.d_state + 1)) as u64;
        self.in_proj().macs(n_patches)
            + conv
            + self.x_proj().macs(n_patches)
            + self.dt_proj().macs(n_patches)
            + scan
            + self.out_proj().macs(n_patches)
    }
}

/// The recurrence with pre-discretized parameters, for analytic checks:
/// `h_t = a_bar_t ⊙ h_{t-1} + b_bar_t x_t`, `y_t = c_t · h_t + d x_t`.
///
/// Shapes (single sequence): `u: [P, D]`, `a_bar`, `b_bar`: `[P, D, N]`, `c: [P, N]`, `d: [D]`.
pub fn scan_discretized<T: Real>(
    u: &Tensor<T>,
    a_bar: &Tensor<T>,
    b_bar: &Tensor<T>,
    c: &Tensor<T>,
    d: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (steps, channels) = match u.shape() {
        [p, dd] => (*p, *dd),
        s => return Err(Error::shape("scan_discretized", s, &[0, 0])),
    };
    let n = c.shape().get(1).copied().unwrap_or(0);
    if a_bar.shape() != [steps, channels, n] || b_bar.shape() != [steps, channels, n] || d.shape() != [channels] {
        return Err(Error::shape("scan_discretized", a_bar.shape(), &[steps, channels, n]));
    }
    let mut h = vec![T::zero(); channels * n];
    let mut y = vec![T::zero(); steps * channels];
    for t in 0..steps {
        for ch in 0..channels {
            let x = u.data()[t * channels + ch];
            let mut acc = d.data()[ch] * x;
            for s in 0..n {
                let i = (t * channels + ch) * n + s;
                let hs = &mut h[ch * n + s];
                *hs = a_bar.data()[i] * *hs + b_bar.data()[i] * x;
                acc += c.data()[t * n + s] * *hs;
            }
            if !acc.is_finite() {
                return Err(Error::Numeric {
                    op: format!("scan step {t}"),
                    index: t * channels + ch,
                });
            }
            y[t * channels + ch] = acc;
        }
    }
    Tensor::new(&[steps, channels], y)
}
