//! Train briefly, then write per-patch branch weights and per-layer means as CSV.
//!
//! cargo run --release --example export_weights -- [out_dir]

use std::fs::File;
use std::path::PathBuf;

use paralleltime::data::{sinusoids, BatchPlan, Part, Prepared, SplitScheme, SyntheticSpec};
use paralleltime::export::{layer_means, patch_weights, sample_lookback, write_layer_means_csv, write_weight_csv};
use paralleltime::model::{ModelConfig, ParallelTime};
use paralleltime::train::{train, TrainConfig};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "weights_out".into()));
    std::fs::create_dir_all(&out)?;
    let raw = sinusoids(&SyntheticSpec::default())?;
    let data = Prepared::new(&raw, SplitScheme::STANDARD, 128, 32)?;
    let model = ParallelTime::new(ModelConfig {
        lookback: 128,
        horizon: 32,
        dim: 16,
        registers: 4,
        ..ModelConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs: 2,
        train_stride: 8,
        ..TrainConfig::default()
    };
    let params = train(&model, model.init(), &data, &cfg, |_| {})?.params;

    let x = sample_lookback(&data, Part::Test, 0)?;
    let rows = patch_weights(&model, &params, &x)?;
    write_weight_csv(File::create(out.join("patch_weights.csv"))?, &rows)?;
    for r in rows.iter().filter(|r| r.layer == 0) {
        println!("layer 0 patch {:>2}: w_att {:.3} w_mamba {:.3}", r.patch_index, r.w_att, r.w_mamba);
    }
    let means = layer_means(&model, &params, &data, Part::Test, &BatchPlan::eval(256))?;
    write_layer_means_csv(File::create(out.join("layer_means.csv"))?, &means)?;
    for m in &means {
        println!("layer {} mean over {} tokens: w_att {:.3} w_mamba {:.3}", m.layer, m.tokens, m.w_att, m.w_mamba);
    }
    println!("wrote {}", out.display());
    Ok(())
}
