//! Reference implementations and fixtures shared by the integration tests.
#![allow(dead_code)]

use paralleltime::numcore::{ParamSpec, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Every declared tensor filled with `U(-scale, scale)`, so no parameter sits at a
/// degenerate initial value (zero output layers, unit gains).
pub fn random_store(specs: &[ParamSpec], seed: u64, scale: f64) -> ParamStore<f64> {
    let mut r = rng(seed);
    let mut s = ParamStore::new();
    for spec in specs {
        s.insert(spec.name.clone(), uniform(&mut r, &spec.shape, scale));
    }
    s
}

/// `x [rows, d_in] · w [d_in, d_out] + b`, by the triple loop.
pub fn linear(x: &[f64], rows: usize, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Vec<f64> {
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    let mut y = vec![0.0; rows * d_out];
    for r in 0..rows {
        for o in 0..d_out {
            let mut acc = b.map_or(0.0, |b| b.data()[o]);
            for i in 0..d_in {
                acc += x[r * d_in + i] * w.data()[i * d_out + o];
            }
            y[r * d_out + o] = acc;
        }
    }
    y
}

/// Unrolled selective-scan recurrence for one sequence:
/// `h_t = exp(Δ_t a) h_{t-1} + Δ_t b_t u_t`, `y_t = c_t · h_t + d u_t`.
///
/// `u`, `delta`: `[P, D]`; `a`: `[D, N]`; `b`, `c`: `[P, N]`; `d`: `[D]`.
pub fn scan_oracle(u: &[f64], delta: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64], p: usize, dd: usize, n: usize) -> Vec<f64> {
    let mut y = vec![0.0; p * dd];
    for ch in 0..dd {
        let mut h = vec![0.0; n];
        for t in 0..p {
            let x = u[t * dd + ch];
            let dl = delta[t * dd + ch];
            let mut out = d[ch] * x;
            for s in 0..n {
                h[s] = (dl * a[ch * n + s]).exp() * h[s] + dl * b[t * n + s] * x;
                out += c[t * n + s] * h[s];
            }
            y[t * dd + ch] = out;
        }
    }
    y
}

/// Windowed attention for one sequence `x [P, dim]` computed query by query: each
/// patch `i` takes a softmax over all registers and patches `i-S+1..=i`.
pub fn attention_oracle(
    x: &[f64],
    params: &ParamStore<f64>,
    prefix: &str,
    p: usize,
    dim: usize,
    heads: usize,
    registers: usize,
    window: usize,
) -> Vec<f64> {
    let get = |n: &str| params.get(&format!("{prefix}.{n}")).unwrap();
    let q = linear(x, p, get("q.weight"), Some(get("q.bias")));
    let mut k = Vec::new();
    let mut v = Vec::new();
    if registers > 0 {
        let reg = get("registers").data();
        k.extend(linear(reg, registers, get("k.weight"), Some(get("k.bias"))));
        v.extend(linear(reg, registers, get("v.weight"), Some(get("v.bias"))));
    }
    k.extend(linear(x, p, get("k.weight"), Some(get("k.bias"))));
    v.extend(linear(x, p, get("v.weight"), Some(get("v.bias"))));
    let hd = dim / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut ctx = vec![0.0; p * dim];
    for i in 0..p {
        // register keys first, then patch keys offset by R
        let keys: Vec<usize> = (0..registers)
            .chain(((i + 1).saturating_sub(window)..=i).map(|j| registers + j))
            .collect();
        for h in 0..heads {
            let cols = h * hd..(h + 1) * hd;
            let scores: Vec<f64> = keys
                .iter()
                .map(|&j| scale * cols.clone().map(|c| q[i * dim + c] * k[j * dim + c]).sum::<f64>())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for (w, &j) in e.iter().zip(&keys) {
                for c in cols.clone() {
                    ctx[i * dim + c] += w / z * v[j * dim + c];
                }
            }
        }
    }
    linear(&ctx, p, get("o.weight"), Some(get("o.bias")))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
