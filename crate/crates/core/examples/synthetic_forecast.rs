//! Train on noisy multi-frequency sinusoids and compare against naive baselines.
//!
//! cargo run --release --example synthetic_forecast -- [epochs]

use paralleltime::cli::baselines;
use paralleltime::data::{sinusoids, BatchPlan, Part, Prepared, SplitScheme, SyntheticSpec};
use paralleltime::model::{ModelConfig, ParallelTime};
use paralleltime::train::{evaluate, train, TrainConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(6);
    let raw = sinusoids(&SyntheticSpec::default())?;
    let data = Prepared::new(&raw, SplitScheme::STANDARD, 256, 64)?;
    let model = ParallelTime::new(ModelConfig {
        lookback: 256,
        horizon: 64,
        dim: 32,
        registers: 8,
        ..ModelConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs,
        train_stride: 4,
        ..TrainConfig::default()
    };
    println!("{} parameters", model.count_params());
    let report = train(&model, model.init(), &data, &cfg, |_| {})?;
    let test = evaluate(&model, &report.params, &data, Part::Test, &BatchPlan::eval(256))?;
    let (last, seasonal) = baselines(&data, &cfg, 168)?;
    println!("best epoch {} (val mse {:.4})", report.best_epoch, report.best_val.mse);
    println!("test           mse {:.4}  mae {:.4}", test.mse, test.mae);
    println!("repeat-last    mse {:.4}  mae {:.4}", last.mse, last.mae);
    println!("seasonal (168) mse {:.4}  mae {:.4}", seasonal.mse, seasonal.mae);
    Ok(())
}
