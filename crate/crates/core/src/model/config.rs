use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weighter::{FusionStrategy, WeightActivation};
use crate::winatt::window_from_ratio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Per-patch expand → compress, flatten, project.
    #[default]
    Ecp,
    /// Flatten all token features, project.
    Standard,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Ecp => "ecp",
            HeadKind::Standard => "standard",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ecp" => Ok(HeadKind::Ecp),
            "standard" => Ok(HeadKind::Standard),
            _ => Err(Error::Config(format!("unknown head {s:?}"))),
        }
    }
}

/// Every architectural hyperparameter of the forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub dim: usize,
    pub n_layers: usize,
    pub heads: usize,
    /// Attention window in patches; `None` derives it from the patch count.
    pub window: Option<usize>,
    pub registers: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub mamba_expand: usize,
    pub ffn_mult: usize,
    pub k_embed: usize,
    pub revin_affine: bool,
    pub fusion: FusionStrategy,
    pub weight_activation: WeightActivation,
    /// Hidden width of the weight network; `None` means `4·ceil(sqrt(dim))`.
    pub weighter_hidden: Option<usize>,
    pub head: HeadKind,
    pub ecp_expand: f64,
    pub ecp_compress_div: f64,
    pub ecp_silu: bool,
    pub attn_dropout: f64,
    pub proj_dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lookback: 512,
            horizon: 96,
            patch_len: 16,
            dim: 128,
            n_layers: 2,
            heads: 4,
            window: None,
            registers: 32,
            d_state: 16,
            d_conv: 2,
            mamba_expand: 2,
            ffn_mult: 2,
            k_embed: 3,
            revin_affine: true,
            fusion: FusionStrategy::ParallelTime,
            weight_activation: WeightActivation::Sigmoid,
            weighter_hidden: None,
            head: HeadKind::Ecp,
            ecp_expand: 2.0,
            ecp_compress_div: 8.0,
            ecp_silu: true,
            attn_dropout: 0.1,
            proj_dropout: 0.05,
            seed: 2023,
        }
    }
}

impl ModelConfig {
    pub fn n_patches(&self) -> usize {
        self.lookback.div_ceil(self.patch_len)
    }

    pub fn window_len(&self) -> usize {
        self.window.unwrap_or_else(|| window_from_ratio(self.n_patches()))
    }

    pub fn ecp_expanded(&self) -> usize {
        ((self.dim as f64 * self.ecp_expand).round() as usize).max(1)
    }

    pub fn ecp_compressed(&self) -> usize {
        ((self.dim as f64 / self.ecp_compress_div).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("patch_len", self.patch_len),
            ("dim", self.dim),
            ("n_layers", self.n_layers),
            ("heads", self.heads),
            ("d_state", self.d_state),
            ("d_conv", self.d_conv),
            ("mamba_expand", self.mamba_expand),
            ("ffn_mult", self.ffn_mult),
            ("k_embed", self.k_embed),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.lookback < 2 {
            return Err(Error::Config("lookback must be at least 2".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!("dim {} not divisible by heads {}", self.dim, self.heads)));
        }
        if self.window == Some(0) {
            return Err(Error::Config("window must be positive".into()));
        }
        if !(self.ecp_expand > 0.0 && self.ecp_compress_div > 0.0) {
            return Err(Error::Config("ecp factors must be positive".into()));
        }
        for (name, r) in [("attn_dropout", self.attn_dropout), ("proj_dropout", self.proj_dropout)] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if let Some(h) = self.weighter_hidden {
            let c = crate::weighter::ceil_sqrt(self.dim);
            if h <= 2 * c {
                return Err(Error::Config(format!("weighter_hidden {h} must exceed 2·{c}")));
            }
        }
        Ok(())
    }
}
