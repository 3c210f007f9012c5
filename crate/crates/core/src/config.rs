//! INI-style run configuration: `[section]` headers, `key = value` lines, `#`/`;`
//! comments. Every key is unique across sections, so command-line flags
//! (`--batch-size 64`) address keys without naming the section.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::data::{sinusoids, CsvSchema, DateColumn, SplitScheme, SyntheticSpec, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Path to a CSV file, or `synthetic`.
    pub dataset: String,
    /// `auto` picks the conventional scheme from the file name.
    pub scheme: String,
    /// `auto`, `none`, or a column name.
    pub date_column: String,
    pub horizons: Vec<usize>,
    pub synthetic: SyntheticSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dataset: "synthetic".into(),
            scheme: "auto".into(),
            date_column: "auto".into(),
            horizons: vec![96],
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl DataConfig {
    pub fn load(&self) -> Result<TimeSeriesDataset> {
        if self.dataset == "synthetic" {
            return sinusoids(&self.synthetic);
        }
        let schema = CsvSchema {
            date_column: match self.date_column.as_str() {
                "auto" => DateColumn::Auto,
                "none" => DateColumn::None,
                name => DateColumn::Named(name.into()),
            },
            value_columns: None,
        };
        Ok(crate::data::load_csv(&self.dataset, &schema)?.0)
    }

    pub fn split_scheme(&self, ds: &TimeSeriesDataset) -> Result<SplitScheme> {
        match self.scheme.as_str() {
            "auto" => Ok(SplitScheme::for_dataset(&ds.name)),
            s => SplitScheme::parse(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub out_dir: String,
    /// Period of the seasonal-naive baseline reported next to model metrics.
    pub season_period: usize,
    pub sweep_layers: Vec<usize>,
    pub sweep_patches: Vec<usize>,
    pub sweep_seeds: Vec<u64>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            out_dir: "runs/default".into(),
            season_period: 24,
            sweep_layers: vec![1, 2, 3],
            sweep_patches: vec![8, 16],
            sweep_seeds: vec![2022, 2023, 2024, 2025, 2026],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub run: RunSection,
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn opt<T: FromStr>(key: &str, v: &str, none: &str) -> Result<Option<T>> {
    if v == none {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn show_opt<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), T::to_string)
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got {v:?}"))),
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let items: Vec<T> = v.split(',').map(|s| num(key, s.trim())).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    Ok(items)
}

fn show_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

struct Key {
    section: &'static str,
    name: &'static str,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str, &str) -> Result<()>,
}

macro_rules! key {
    ($section:literal, $name:literal, |$c:ident| $get:expr, |$m:ident, $k:ident, $v:ident| $set:expr) => {
        Key {
            section: $section,
            name: $name,
            get: |$c: &RunConfig| $get,
            set: |$m: &mut RunConfig, $k: &str, $v: &str| {
                $set;
                Ok(())
            },
        }
    };
}

const KEYS: &[Key] = &[
    key!("data", "dataset", |c| c.data.dataset.clone(), |m, _k, v| m.data.dataset = v.to_string()),
    key!("data", "scheme", |c| c.data.scheme.clone(), |m, _k, v| m.data.scheme = v.to_string()),
    key!("data", "date_column", |c| c.data.date_column.clone(), |m, _k, v| m.data.date_column = v.to_string()),
    key!("data", "horizons", |c| show_list(&c.data.horizons), |m, k, v| m.data.horizons = list(k, v)?),
    key!("data", "synthetic_vars", |c| c.data.synthetic.n_vars.to_string(), |m, k, v| m.data.synthetic.n_vars = num(k, v)?),
    key!("data", "synthetic_len", |c| c.data.synthetic.len.to_string(), |m, k, v| m.data.synthetic.len = num(k, v)?),
    key!("data", "synthetic_periods", |c| show_list(&c.data.synthetic.periods), |m, k, v| m.data.synthetic.periods = list(k, v)?),
    key!("data", "synthetic_noise", |c| c.data.synthetic.noise_std.to_string(), |m, k, v| m.data.synthetic.noise_std = num(k, v)?),
    key!("data", "synthetic_seed", |c| c.data.synthetic.seed.to_string(), |m, k, v| m.data.synthetic.seed = num(k, v)?),
    key!("model", "lookback", |c| c.model.lookback.to_string(), |m, k, v| m.model.lookback = num(k, v)?),
    key!("model", "patch_len", |c| c.model.patch_len.to_string(), |m, k, v| m.model.patch_len = num(k, v)?),
    key!("model", "dim", |c| c.model.dim.to_string(), |m, k, v| m.model.dim = num(k, v)?),
    key!("model", "n_layers", |c| c.model.n_layers.to_string(), |m, k, v| m.model.n_layers = num(k, v)?),
    key!("model", "heads", |c| c.model.heads.to_string(), |m, k, v| m.model.heads = num(k, v)?),
    key!("model", "window", |c| show_opt(&c.model.window, "auto"), |m, k, v| m.model.window = opt(k, v, "auto")?),
    key!("model", "registers", |c| c.model.registers.to_string(), |m, k, v| m.model.registers = num(k, v)?),
    key!("model", "d_state", |c| c.model.d_state.to_string(), |m, k, v| m.model.d_state = num(k, v)?),
    key!("model", "d_conv", |c| c.model.d_conv.to_string(), |m, k, v| m.model.d_conv = num(k, v)?),
    key!("model", "mamba_expand", |c| c.model.mamba_expand.to_string(), |m, k, v| m.model.mamba_expand = num(k, v)?),
    key!("model", "ffn_mult", |c| c.model.ffn_mult.to_string(), |m, k, v| m.model.ffn_mult = num(k, v)?),
    key!("model", "k_embed", |c| c.model.k_embed.to_string(), |m, k, v| m.model.k_embed = num(k, v)?),
    key!("model", "revin_affine", |c| c.model.revin_affine.to_string(), |m, k, v| m.model.revin_affine = boolean(k, v)?),
    key!("model", "fusion", |c| c.model.fusion.to_string(), |m, _k, v| m.model.fusion = v.parse()?),
    key!("model", "weight_activation", |c| c.model.weight_activation.to_string(), |m, _k, v| m.model.weight_activation = v.parse()?),
    key!("model", "weighter_hidden", |c| show_opt(&c.model.weighter_hidden, "auto"), |m, k, v| m.model.weighter_hidden = opt(k, v, "auto")?),
    key!("model", "head", |c| c.model.head.to_string(), |m, _k, v| m.model.head = v.parse()?),
    key!("model", "ecp_expand", |c| c.model.ecp_expand.to_string(), |m, k, v| m.model.ecp_expand = num(k, v)?),
    key!("model", "ecp_compress_div", |c| c.model.ecp_compress_div.to_string(), |m, k, v| m.model.ecp_compress_div = num(k, v)?),
    key!("model", "ecp_silu", |c| c.model.ecp_silu.to_string(), |m, k, v| m.model.ecp_silu = boolean(k, v)?),
    key!("model", "attn_dropout", |c| c.model.attn_dropout.to_string(), |m, k, v| m.model.attn_dropout = num(k, v)?),
    key!("model", "proj_dropout", |c| c.model.proj_dropout.to_string(), |m, k, v| m.model.proj_dropout = num(k, v)?),
    key!("train", "seed", |c| c.train.seed.to_string(), |m, k, v| {
        m.train.seed = num(k, v)?;
        m.model.seed = m.train.seed;
    }),
    key!("train", "epochs", |c| c.train.epochs.to_string(), |m, k, v| m.train.epochs = num(k, v)?),
    key!("train", "lr", |c| c.train.lr.to_string(), |m, k, v| m.train.lr = num(k, v)?),
    key!("train", "batch_size", |c| c.train.batch_size.to_string(), |m, k, v| m.train.batch_size = num(k, v)?),
    key!("train", "huber_delta", |c| c.train.huber_delta.to_string(), |m, k, v| m.train.huber_delta = num(k, v)?),
    key!("train", "beta1", |c| c.train.beta1.to_string(), |m, k, v| m.train.beta1 = num(k, v)?),
    key!("train", "beta2", |c| c.train.beta2.to_string(), |m, k, v| m.train.beta2 = num(k, v)?),
    key!("train", "adam_eps", |c| c.train.adam_eps.to_string(), |m, k, v| m.train.adam_eps = num(k, v)?),
    key!("train", "clip_norm", |c| show_opt(&c.train.clip_norm, "none"), |m, k, v| m.train.clip_norm = opt(k, v, "none")?),
    key!("train", "variate_subsample", |c| show_opt(&c.train.variate_subsample, "none"), |m, k, v| m.train.variate_subsample = opt(k, v, "none")?),
    key!("train", "val_subsample", |c| show_opt(&c.train.val_subsample, "none"), |m, k, v| m.train.val_subsample = opt(k, v, "none")?),
    key!("train", "train_stride", |c| c.train.train_stride.to_string(), |m, k, v| m.train.train_stride = num(k, v)?),
    key!("train", "max_batches", |c| show_opt(&c.train.max_batches, "none"), |m, k, v| m.train.max_batches = opt(k, v, "none")?),
    key!("train", "eval_batch", |c| c.train.eval_batch.to_string(), |m, k, v| m.train.eval_batch = num(k, v)?),
    key!("run", "out_dir", |c| c.run.out_dir.clone(), |m, _k, v| m.run.out_dir = v.to_string()),
    key!("run", "season_period", |c| c.run.season_period.to_string(), |m, k, v| m.run.season_period = num(k, v)?),
    key!("run", "sweep_layers", |c| show_list(&c.run.sweep_layers), |m, k, v| m.run.sweep_layers = list(k, v)?),
    key!("run", "sweep_patches", |c| show_list(&c.run.sweep_patches), |m, k, v| m.run.sweep_patches = list(k, v)?),
    key!("run", "sweep_seeds", |c| show_list(&c.run.sweep_seeds), |m, k, v| m.run.sweep_seeds = list(k, v)?),
];

const SECTIONS: [&str; 4] = ["data", "model", "train", "run"];

fn find(name: &str) -> Result<&'static Key> {
    KEYS.iter()
        .find(|k| k.name == name)
        .ok_or_else(|| Error::Config(format!("unknown key {name:?}")))
}

impl RunConfig {
    /// Set one key from its text form (`snake_case` or `kebab-case` name).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let name = key.replace('-', "_");
        let k = find(&name)?;
        (k.set)(self, &name, value.trim())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok((find(&key.replace('-', "_"))?.get)(self))
    }

    /// Every key name, in file order.
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|k| k.name)
    }

    /// Parse a config file over the defaults. Keys must appear under their own section.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {line_no}: {msg}"));
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("malformed section header {line:?}")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(at(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            let k = k.trim();
            let key = find(k).map_err(|e| at(e.to_string()))?;
            match &section {
                Some(s) if s == key.section => {}
                Some(s) => return Err(at(format!("key {k:?} belongs to [{}], not [{s}]", key.section))),
                None => return Err(at(format!("key {k:?} outside any section"))),
            }
            (key.set)(&mut cfg, k, v.trim()).map_err(|e| at(e.to_string()))?;
        }
        Ok(cfg)
    }

    /// Apply `--key value` pairs on top of this config.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected --key, got {flag:?}")))?;
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k, v.to_string()),
                None => (
                    key,
                    it.next()
                        .ok_or_else(|| Error::Config(format!("flag --{key} needs a value")))?
                        .clone(),
                ),
            };
            self.set(key, &value)?;
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        for (i, section) in SECTIONS.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{section}]");
            for k in KEYS.iter().filter(|k| k.section == *section) {
                let _ = writeln!(out, "{} = {}", k.name, (k.get)(self));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.horizons.is_empty() || self.data.horizons.contains(&0) {
            return Err(Error::Config("horizons must be a non-empty list of positive values".into()));
        }
        let mut m = self.model.clone();
        m.horizon = self.data.horizons[0];
        m.validate()?;
        self.train.validate()
    }

    /// Model config for one horizon of the run.
    pub fn model_for(&self, horizon: usize) -> ModelConfig {
        ModelConfig {
            horizon,
            ..self.model.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_text() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_ini()).unwrap(), cfg);
    }

    #[test]
    fn file_values_and_overrides() {
        let text = "# comment\n[model]\ndim = 16 ; inline\nwindow = 3\n\n[train]\nlr = 0.0008\nclip_norm = none\n";
        let mut cfg = RunConfig::parse(text).unwrap();
        assert_eq!((cfg.model.dim, cfg.model.window, cfg.train.lr, cfg.train.clip_norm), (16, Some(3), 0.0008, None));
        cfg.apply_overrides(&["--batch-size".into(), "256".into(), "--fusion=mean".into()]).unwrap();
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(cfg.model.fusion, crate::weighter::FusionStrategy::Mean);
        assert_eq!(RunConfig::parse(&cfg.to_ini()).unwrap(), cfg);
    }

    #[test]
    fn unknown_and_misplaced_keys_rejected() {
        assert!(RunConfig::parse("[model]\ndimm = 3\n").is_err());
        assert!(RunConfig::parse("[train]\ndim = 3\n").is_err());
        assert!(RunConfig::parse("[extra]\n").is_err());
        assert!(RunConfig::parse("dim = 3\n").is_err());
        assert!(RunConfig::default().apply_overrides(&["--nope".into(), "1".into()]).is_err());
    }

    #[test]
    fn seed_sets_model_and_training() {
        let mut cfg = RunConfig::default();
        cfg.set("seed", "7").unwrap();
        assert_eq!((cfg.model.seed, cfg.train.seed), (7, 7));
    }
}
