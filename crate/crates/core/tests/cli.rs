//! The command-line binary end to end on a tiny synthetic run.

use std::path::Path;
use std::process::{Command, Output};

use paralleltime::config::RunConfig;
use paralleltime::export::read_weight_csv;
use paralleltime::sweep::parse_table;
use serde_json::Value;

const CONFIG: &str = "\
[data]
horizons = 8,16
synthetic_vars = 2
synthetic_len = 700

[model]
lookback = 48
patch_len = 8
dim = 8
heads = 2
registers = 2
d_state = 4

[train]
epochs = 1
batch_size = 16
max_batches = 4
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paralleltime"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json summary")
}

#[test]
fn train_eval_export_sweep_and_costs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("run.ini"), CONFIG).unwrap();
    let base = ["--config", "run.ini"];

    let train = json(&run(root, &[&base[..], &["train", "--out-dir", "out"]].concat()));
    assert_eq!(train["results"].as_array().unwrap().len(), 2);
    for h in [8, 16] {
        let sub = root.join(format!("out/h{h}"));
        for f in ["checkpoint.ptck", "history.jsonl", "metrics.json"] {
            assert!(sub.join(f).exists(), "{f} for H={h}");
        }
        let history = std::fs::read_to_string(sub.join("history.jsonl")).unwrap();
        assert_eq!(history.lines().count(), 1);
    }
    // the resolved config is written back and parses to what the flags asked for
    let echoed = RunConfig::parse(&std::fs::read_to_string(root.join("out/config.ini")).unwrap()).unwrap();
    assert_eq!(echoed.run.out_dir, "out");
    assert_eq!(echoed.model.dim, 8);

    let eval = json(&run(root, &[&base[..], &["eval", "--checkpoint", "out/h16/checkpoint.ptck", "--out-dir", "out"]].concat()));
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(root.join("out/h16/metrics.json")).unwrap()).unwrap();
    assert_eq!(eval["test"], metrics["test"]);
    assert_eq!(eval["horizon"], 16);

    let export = json(&run(
        root,
        &[&base[..], &["export-weights", "--checkpoint", "out/h8/checkpoint.ptck", "--sample", "2", "--split", "val", "--out-dir", "out"]].concat(),
    ));
    let rows = read_weight_csv(std::fs::File::open(root.join("out/patch_weights_2.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2 * 6);
    assert!(rows.iter().all(|r| r.w_att > 0.0 && r.w_att < 1.0));
    assert_eq!(export["means"].as_array().unwrap().len(), 2);
    assert!(root.join("out/layer_means_val.csv").exists());

    let costs = json(&run(root, &[&base[..], &["count-flops", "--out-dir", "out"]].concat()));
    let reports = costs["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    for r in reports {
        assert_eq!(r["fwd_bwd_flops"].as_u64().unwrap(), 3 * r["fwd_flops"].as_u64().unwrap());
    }

    json(&run(
        root,
        &[&base[..], &["sweep", "--out-dir", "out", "--sweep-layers", "1,2", "--sweep-patches", "8", "--sweep-seeds", "1,2"]].concat(),
    ));
    let table = parse_table(&std::fs::read_to_string(root.join("out/sweep.tsv")).unwrap()).unwrap();
    assert_eq!(table.len(), 2);
    assert!(table.iter().all(|r| r.runs == 2 && r.failed == 0 && r.mse.is_some()));
}

#[test]
fn failures_exit_nonzero_with_a_json_line() {
    let dir = tempfile::tempdir().unwrap();
    for (args, kind) in [
        (vec!["train", "--no-such-key", "1"], "config"),
        (vec!["train", "--epochs", "0"], "config"),
        (vec!["eval", "--checkpoint", "missing.ptck"], "checkpoint"),
        (vec!["train", "--dataset", "missing.csv"], "io"),
    ] {
        let out = run(dir.path(), &args);
        assert!(!out.status.success(), "{args:?}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        let line = stderr.lines().last().expect("error line");
        let v: Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("not json: {line}"));
        assert_eq!(v["error"], kind, "{args:?}: {line}");
        assert!(!v["message"].as_str().unwrap().is_empty());
    }
}
