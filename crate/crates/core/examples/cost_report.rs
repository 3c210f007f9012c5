//! Parameter and FLOP counts across horizons for both prediction heads.
//!
//! cargo run --release --example cost_report -- [dim]

use paralleltime::cost::{count_flops, measure_forward_flops, si};
use paralleltime::model::{HeadKind, ModelConfig};

fn main() -> anyhow::Result<()> {
    let dim = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(128);
    println!("{:>8} {:>6} {:>10} {:>10} {:>10}", "head", "H", "params", "fwd", "fwd+bwd");
    for head in [HeadKind::Ecp, HeadKind::Standard] {
        for horizon in [96, 192, 336, 720] {
            let cfg = ModelConfig { dim, horizon, head, ..ModelConfig::default() };
            let r = count_flops(&cfg)?;
            println!(
                "{:>8} {horizon:>6} {:>10} {:>10} {:>10}",
                format!("{head:?}").to_lowercase(),
                si(r.params as f64),
                si(r.fwd_flops as f64),
                si(r.fwd_bwd_flops as f64)
            );
        }
    }
    let cfg = ModelConfig { dim, ..ModelConfig::default() };
    let analytic = count_flops(&cfg)?.fwd_flops;
    let measured = measure_forward_flops(&cfg)?;
    println!("H=96 forward: analytic {} vs counted on a real pass {}", si(analytic as f64), si(measured as f64));
    Ok(())
}
