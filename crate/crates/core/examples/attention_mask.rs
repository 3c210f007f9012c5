//! Visibility pattern of windowed attention with register tokens.
//!
//! cargo run --release --example attention_mask -- [patches] [registers] [window]

use paralleltime::winatt::{build_mask, window_from_ratio};

fn main() -> anyhow::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let patches = args.first().copied().unwrap_or(12);
    let registers = args.get(1).copied().unwrap_or(2);
    let window = args.get(2).copied().unwrap_or_else(|| window_from_ratio(patches).max(3));
    let mask = build_mask(patches, registers, window)?;
    println!("P={patches} R={registers} S={window} (rows: queries, cols: keys; r = register)");
    let label = |i: usize| if i < registers { format!("r{i}") } else { format!("p{}", i - registers) };
    print!("     ");
    for c in 0..mask.size() {
        print!("{:>4}", label(c));
    }
    println!();
    for r in 0..mask.size() {
        print!("{:>4} ", label(r));
        for c in 0..mask.size() {
            print!("{:>4}", if mask.get(r, c) { "#" } else { "." });
        }
        println!();
    }
    let visible = mask.patch_rows().iter().filter(|&&v| v).count();
    println!("patch-query pairs: {visible} of {} in full causal attention", (0..patches).map(|i| registers + i + 1).sum::<usize>());
    Ok(())
}
