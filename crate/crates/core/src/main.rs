use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use paralleltime::cli;
use paralleltime::config::RunConfig;
use paralleltime::data::Part;

#[derive(Parser)]
#[command(version, about = "Parallel Mamba + windowed-attention forecaster")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// INI-style config file; omitted keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per configured horizon.
    Train(Overrides),
    /// Score a checkpoint on the test split, next to naive baselines.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Analytic parameter and FLOP counts per horizon.
    CountFlops(Overrides),
    /// Per-patch branch weights of one test sample and per-layer means.
    ExportWeights {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train a layers × patch-length × seed grid and tabulate test metrics.
    Sweep(Overrides),
}

#[derive(clap::Args)]
struct Overrides {
    /// Config overrides as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    rest: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

fn load_config(path: Option<&PathBuf>, overrides: &Overrides) -> anyhow::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&overrides.rest)?;
    Ok(cfg)
}

fn run(args: Args) -> anyhow::Result<serde_json::Value> {
    let config = args.config.as_ref();
    Ok(match args.command {
        Command::Train(o) => cli::cmd_train(&load_config(config, &o)?)?,
        Command::Eval { checkpoint, overrides } => cli::cmd_eval(&load_config(config, &overrides)?, &checkpoint)?,
        Command::CountFlops(o) => cli::cmd_count_flops(&load_config(config, &o)?)?,
        Command::ExportWeights {
            checkpoint,
            sample,
            split,
            overrides,
        } => {
            let part = match split {
                Split::Train => Part::Train,
                Split::Val => Part::Val,
                Split::Test => Part::Test,
            };
            cli::cmd_export_weights(&load_config(config, &overrides)?, &checkpoint, sample, part)?
        }
        Command::Sweep(o) => cli::cmd_sweep(&load_config(config, &o)?)?,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(err) => {
            let kind = err
                .downcast_ref::<paralleltime::Error>()
                .map_or("io", paralleltime::Error::kind);
            eprintln!("{}", serde_json::json!({ "error": kind, "message": format!("{err:#}") }));
            ExitCode::FAILURE
        }
    }
}
