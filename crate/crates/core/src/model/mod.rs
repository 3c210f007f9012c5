//! The full forecaster: RevIN → patch embedding → decoder blocks with parallel
//! attention/Mamba branches → final LayerNorm → prediction head → inverse RevIN.

mod config;

pub use config::{HeadKind, ModelConfig};

use crate::embedder::{denormalize_rows, normalize_and_patch, Embedder, PatchGrid, RevinAffine};
use crate::error::{Error, Result};
use crate::layers::{join, LayerNorm, Linear, Mode};
use crate::mamba::Mamba;
use crate::numcore::init::{count, initialize};
use crate::numcore::{Bound, ParamSpec, ParamStore, Real, Tape, Tensor, Var};
use crate::weighter::Weighter;
use crate::winatt::WindowedAttention;

/// One decoder layer: `u = x + fuse(Att(LN(x)), Mamba(LN(x)))`, `out = u + FFN(LN(u))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attention: WindowedAttention,
    pub mamba: Mamba,
    pub weighter: Weighter,
    pub ln2: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl Block {
    pub fn new(cfg: &ModelConfig) -> Block {
        let dim = cfg.dim;
        Block {
            ln1: LayerNorm { dim },
            attention: WindowedAttention {
                dim,
                heads: cfg.heads,
                window: cfg.window_len(),
                registers: cfg.registers,
                n_patches: cfg.n_patches(),
                dropout: cfg.attn_dropout,
            },
            mamba: Mamba {
                dim,
                d_state: cfg.d_state,
                d_conv: cfg.d_conv,
                expand: cfg.mamba_expand,
            },
            weighter: Weighter::new(dim, cfg.weighter_hidden, cfg.fusion, cfg.weight_activation),
            ln2: LayerNorm { dim },
            ffn_in: Linear::new(dim, cfg.ffn_mult * dim, true),
            ffn_out: Linear::new(cfg.ffn_mult * dim, dim, true),
        }
    }

    pub fn specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut v = self.ln1.specs(&join(prefix, "ln1"));
        v.extend(self.attention.specs(&join(prefix, "attention")));
        v.extend(self.mamba.specs(&join(prefix, "mamba")));
        v.extend(self.weighter.specs(&join(prefix, "weighter")));
        v.extend(self.ln2.specs(&join(prefix, "ln2")));
        v.extend(self.ffn_in.specs(&join(prefix, "ffn_in")));
        v.extend(self.ffn_out.specs(&join(prefix, "ffn_out")));
        v
    }

    /// `x: [B, P, dim]` → (`[B, P, dim]`, optional `[B, P, 2]` branch weights).
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        prefix: &str,
        x: Var,
        mode: &mut Mode,
    ) -> Result<(Var, Option<Var>)> {
        let h = self.ln1.forward(tape, p, &join(prefix, "ln1"), x)?;
        let att = self.attention.forward(tape, p, &join(prefix, "attention"), h, mode)?;
        let mam = self.mamba.forward(tape, p, &join(prefix, "mamba"), h)?;
        let fused = self.weighter.fuse(tape, p, &join(prefix, "weighter"), att, mam)?;
        let u = tape.add(x, fused.out)?;
        let h2 = self.ln2.forward(tape, p, &join(prefix, "ln2"), u)?;
        let f = self.ffn_in.forward(tape, p, &join(prefix, "ffn_in"), h2)?;
        let f = tape.silu(f);
        let f = self.ffn_out.forward(tape, p, &join(prefix, "ffn_out"), f)?;
        Ok((tape.add(u, f)?, fused.weights))
    }

    pub fn macs(&self, n_patches: usize) -> u64 {
        self.attention.macs()
            + self.mamba.macs(n_patches)
            + self.weighter.macs(n_patches)
            + self.ffn_in.macs(n_patches)
            + self.ffn_out.macs(n_patches)
    }
}

/// Prediction head over the final tokens `[B, P, dim]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Head {
    pub kind: HeadKind,
    pub dim: usize,
    pub n_patches: usize,
    pub horizon: usize,
    pub expanded: usize,
    pub compressed: usize,
    pub silu: bool,
    pub dropout: f64,
}

impl Head {
    pub fn new(cfg: &ModelConfig) -> Head {
        Head {
            kind: cfg.head,
            dim: cfg.dim,
            n_patches: cfg.n_patches(),
            horizon: cfg.horizon,
            expanded: cfg.ecp_expanded(),
            compressed: cfg.ecp_compressed(),
            silu: cfg.ecp_silu,
            dropout: cfg.proj_dropout,
        }
    }

    fn width(&self) -> usize {
        match self.kind {
            HeadKind::Ecp => self.compressed,
            HeadKind::Standard => self.dim,
        }
    }

    fn expand(&self) -> Linear {
        Linear::new(self.dim, self.expanded, true)
    }

    fn compress(&self) -> Linear {
        Linear::new(self.expanded, self.compressed, true)
    }

    fn proj(&self) -> Linear {
        Linear::new(self.n_patches * self.width(), self.horizon, true)
    }

    pub fn specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut v = Vec::new();
        if self.kind == HeadKind::Ecp {
            v.extend(self.expand().specs(&join(prefix, "expand")));
            v.extend(self.compress().specs(&join(prefix, "compress")));
        }
        v.extend(self.proj().specs(&join(prefix, "proj")));
        v
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, prefix: &str, tokens: Var, mode: &mut Mode) -> Result<Var> {
        let b = tape.shape(tokens)[0];
        let mut z = tokens;
        if self.kind == HeadKind::Ecp {
            z = self.expand().forward(tape, p, &join(prefix, "expand"), z)?;
            if self.silu {
                z = tape.silu(z);
            }
            z = self.compress().forward(tape, p, &join(prefix, "compress"), z)?;
        }
        let flat = tape.reshape(z, &[b, self.n_patches * self.width()])?;
        let flat = mode.dropout(tape, flat, self.dropout)?;
        self.proj().forward(tape, p, &join(prefix, "proj"), flat)
    }

    pub fn macs(&self) -> u64 {
        let mut m = self.proj().macs(1);
        if self.kind == HeadKind::Ecp {
            m += self.expand().macs(self.n_patches) + self.compress().macs(self.n_patches);
        }
        m
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forecast {
    /// `[B, H]` forecasts on the input's scale.
    pub pred: Var,
    /// `[B, P, dim]` tokens after the final LayerNorm.
    pub tokens: Var,
    /// Per layer, `[B, P, 2]` (`w_att`, `w_mamba`); empty for the ablation strategies.
    pub weights: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelTime {
    pub cfg: ModelConfig,
    pub grid: PatchGrid,
    pub embedder: Embedder,
    pub blocks: Vec<Block>,
    pub final_norm: LayerNorm,
    pub head: Head,
}

impl ParallelTime {
    pub fn new(cfg: ModelConfig) -> Result<ParallelTime> {
        cfg.validate()?;
        let grid = PatchGrid::new(cfg.lookback, cfg.patch_len)?;
        let embedder = Embedder {
            patch_len: cfg.patch_len,
            n_patches: grid.n_patches(),
            dim: cfg.dim,
            kernel: cfg.k_embed,
        };
        let blocks = (0..cfg.n_layers).map(|_| Block::new(&cfg)).collect();
        Ok(ParallelTime {
            grid,
            embedder,
            blocks,
            final_norm: LayerNorm { dim: cfg.dim },
            head: Head::new(&cfg),
            cfg,
        })
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = Vec::new();
        if self.cfg.revin_affine {
            v.extend(RevinAffine::specs("revin"));
        }
        v.extend(self.embedder.specs("embed"));
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(b.specs(&format!("blocks.{i}")));
        }
        v.extend(self.final_norm.specs("norm"));
        v.extend(self.head.specs("head"));
        v
    }

    pub fn count_params(&self) -> usize {
        count(&self.param_specs())
    }

    /// Freshly initialized parameters, seeded by the config seed.
    pub fn init<T: Real>(&self) -> ParamStore<T> {
        initialize(&self.param_specs(), self.cfg.seed)
    }

    /// Patches `[B, P, patch_len]` (already instance-normalized) → final tokens and
    /// per-layer weights.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, patches: Var, mode: &mut Mode) -> Result<(Var, Vec<Var>)> {
        let mut x = patches;
        if self.cfg.revin_affine {
            x = RevinAffine::apply(tape, p, "revin", x)?;
        }
        let mut x = self.embedder.forward(tape, p, "embed", x)?;
        let mut weights = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let (y, w) = b.forward(tape, p, &format!("blocks.{i}"), x, mode)?;
            x = y;
            weights.extend(w);
        }
        let tokens = self.final_norm.forward(tape, p, "norm", x)?;
        Ok((tokens, weights))
    }

    /// `x: [B, L]` raw lookbacks → forecasts `[B, H]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: &Tensor<T>, mode: &mut Mode) -> Result<Forecast> {
        if x.ndim() != 2 || x.shape()[1] != self.cfg.lookback {
            return Err(Error::shape("forward", x.shape(), &[0, self.cfg.lookback]));
        }
        let (patches, states) = normalize_and_patch(x, self.grid)?;
        let patches = tape.constant(patches);
        let (tokens, weights) = self.encode(tape, p, patches, mode)?;
        let mut y = self.head.forward(tape, p, "head", tokens, mode)?;
        if self.cfg.revin_affine {
            y = RevinAffine::invert(tape, p, "revin", y)?;
        }
        let pred = denormalize_rows(tape, y, &states)?;
        Ok(Forecast { pred, tokens, weights })
    }

    /// Evaluation-mode forecasts without gradients.
    pub fn predict<T: Real>(&self, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let f = self.forward(&mut tape, &p, x, &mut Mode::Eval)?;
        Ok(tape.value(f.pred).clone())
    }

    /// Multiply-accumulates of one univariate forward pass.
    pub fn macs(&self) -> u64 {
        let p = self.grid.n_patches();
        self.embedder.macs() + self.blocks.iter().map(|b| b.macs(p)).sum::<u64>() + self.head.macs()
    }
}
