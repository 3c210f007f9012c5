//! Load a CSV series, standardize it with train statistics and show the splits.
//!
//! cargo run --release --example load_csv -- path/to/ETTh1.csv [lookback] [horizon]
//!
//! Without a path, a small generated file is used.

use paralleltime::data::{load_csv, origins, CsvSchema, Part, Prepared, SplitScheme};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = match args.next() {
        Some(p) => std::path::PathBuf::from(p),
        None => {
            let p = std::env::temp_dir().join("paralleltime_demo.csv");
            let mut text = String::from("date,load,temp\n");
            for t in 0..1500 {
                let missing = t % 97 == 5;
                let load = if missing { String::new() } else { format!("{:.3}", 10.0 + (t as f64 / 24.0 * std::f64::consts::TAU).sin()) };
                text.push_str(&format!("t{t},{load},{:.3}\n", 20.0 + 0.01 * t as f64));
            }
            std::fs::write(&p, text)?;
            p
        }
    };
    let lookback = args.next().map(|a| a.parse()).transpose()?.unwrap_or(96);
    let horizon = args.next().map(|a| a.parse()).transpose()?.unwrap_or(24);

    let (raw, report) = load_csv(&path, &CsvSchema::default())?;
    println!("{}: {} variates × {} steps", raw.name, raw.n_vars(), raw.len());
    for (name, filled) in raw.variate_names.iter().zip(&report.filled) {
        println!("  {name}: {filled} missing cells forward-filled");
    }
    let scheme = SplitScheme::for_dataset(&raw.name);
    let data = Prepared::new(&raw, scheme, lookback, horizon)?;
    println!("split scheme {}", scheme.name());
    for part in [Part::Train, Part::Val, Part::Test] {
        let targets = data.splits.part(part);
        let n = origins(data.range(part), lookback, horizon).len();
        println!("  {part:?}: steps {targets:?}, {n} windows per variate");
    }
    for (v, name) in raw.variate_names.iter().enumerate() {
        println!("  {name}: train mean {:.3}, std {:.3}", data.scaler.mean[v], data.scaler.std[v]);
    }
    Ok(())
}
