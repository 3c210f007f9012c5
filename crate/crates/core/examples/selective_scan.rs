//! The selective-scan recurrence on a toy input, next to its discretized form.
//!
//! cargo run --release --example selective_scan

use paralleltime::mamba::scan_discretized;
use paralleltime::numcore::{Tape, Tensor};

fn main() -> anyhow::Result<()> {
    let (steps, channels, state) = (6, 2, 3);
    let u = Tensor::<f64>::from_fn(&[1, steps, channels], |i| if i / channels == 0 { 1.0 } else { 0.0 });
    let delta = Tensor::full(&[1, steps, channels], 0.5);
    let a = Tensor::from_fn(&[channels, state], |i| -(1.0 + i as f64 * 0.5));
    let b = Tensor::ones(&[1, steps, state]);
    let c = Tensor::ones(&[1, steps, state]);
    let d = Tensor::zeros(&[channels]);

    let mut tape = Tape::new();
    let vars = [&u, &delta, &a, &b, &c, &d].map(|t| tape.constant(t.clone()));
    let y = tape.selective_scan(vars[0], vars[1], vars[2], vars[3], vars[4], vars[5])?;
    println!("impulse response of the selective scan (channel 0, channel 1):");
    for t in 0..steps {
        println!("  t={t}: {:.5} {:.5}", tape.data(y)[t * channels], tape.data(y)[t * channels + 1]);
    }

    // same recurrence with A_bar = exp(ΔA) and B_bar = ΔB precomputed
    let a_bar = Tensor::from_fn(&[steps, channels, state], |i| (0.5 * a.data()[i % (channels * state)]).exp());
    let b_bar = Tensor::full(&[steps, channels, state], 0.5);
    let u2 = Tensor::new(&[steps, channels], u.data().to_vec())?;
    let c2 = Tensor::ones(&[steps, state]);
    let y2 = scan_discretized(&u2, &a_bar, &b_bar, &c2, &d)?;
    let diff = y2.data().iter().zip(tape.data(y)).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    println!("max difference to the pre-discretized recurrence: {diff:.2e}");
    Ok(())
}
