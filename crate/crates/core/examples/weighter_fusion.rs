//! Per-patch fusion weights for two branch outputs, and the fixed-weight ablations.
//!
//! cargo run --release --example weighter_fusion

use paralleltime::numcore::init::initialize;
use paralleltime::numcore::{Tape, Tensor};
use paralleltime::weighter::{FusionStrategy, WeightActivation, Weighter};

fn main() -> anyhow::Result<()> {
    let (dim, patches) = (16, 5);
    // attention output grows along the patches, the Mamba output stays flat
    let att = Tensor::<f64>::from_fn(&[1, patches, dim], |i| (i / dim) as f64 * ((i % dim) as f64 * 0.3).sin());
    let mamba = Tensor::<f64>::from_fn(&[1, patches, dim], |i| ((i % dim) as f64 * 0.7).cos());

    for activation in [WeightActivation::Sigmoid, WeightActivation::Softmax] {
        let w = Weighter::new(dim, None, FusionStrategy::ParallelTime, activation);
        let mut params = initialize::<f64>(&w.specs("w"), 1);
        // a hand-set output layer so the weights respond to the inputs
        params.insert("w.w2.weight", Tensor::from_fn(&[w.hidden, 2], |i| if i % 2 == 0 { 6.0 } else { -6.0 }));
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let (a, m) = (tape.constant(att.clone()), tape.constant(mamba.clone()));
        let fused = w.fuse(&mut tape, &p, "w", a, m)?;
        let weights = tape.data(fused.weights.expect("learned strategy"));
        println!("{activation} weights (w_att, w_mamba) per patch:");
        for (i, pair) in weights.chunks(2).enumerate() {
            println!("  patch {i}: {:.3} {:.3}", pair[0], pair[1]);
        }
    }

    for strategy in [FusionStrategy::Mean, FusionStrategy::Sum] {
        let w = Weighter::new(dim, None, strategy, WeightActivation::Sigmoid);
        let params = initialize::<f64>(&w.specs("w"), 1);
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let (a, m) = (tape.constant(att.clone()), tape.constant(mamba.clone()));
        let out = w.fuse(&mut tape, &p, "w", a, m)?.out;
        let norm = tape.data(out).iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("{strategy}: no learned weights, fused output norm {norm:.3}");
    }
    Ok(())
}
