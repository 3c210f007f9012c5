//! Layers and kernels against hand-written reference loops.

mod common;

use common::{attention_oracle, linear, max_abs_diff, random_store, rng, uniform};
use paralleltime::layers::Mode;
use paralleltime::mamba::Mamba;
use paralleltime::model::{Head, HeadKind, ModelConfig, ParallelTime};
use paralleltime::numcore::{Padding, ParamStore, Tape, Tensor};
use paralleltime::weighter::{FusionStrategy, WeightActivation, Weighter, RMS_EPS};
use paralleltime::winatt::WindowedAttention;
use rand::Rng;

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(1);
    for _ in 0..30 {
        let (batch, m, k, n) = (r.random_range(1..4), r.random_range(1..9), r.random_range(1..9), r.random_range(1..9));
        let a = uniform(&mut r, &[batch, m, k], 1.0);
        let b = uniform(&mut r, &[batch, k, n], 1.0);
        let mut t = Tape::<f64>::new();
        let (av, bv) = (t.constant(a.clone()), t.constant(b.clone()));
        let y = t.matmul(av, bv).unwrap();
        for i in 0..batch {
            let bi = Tensor::new(&[k, n], b.data()[i * k * n..(i + 1) * k * n].to_vec()).unwrap();
            let want = linear(&a.data()[i * m * k..(i + 1) * m * k], m, &bi, None);
            let got = &t.data(y)[i * m * n..(i + 1) * m * n];
            assert!(max_abs_diff(got, &want) < 1e-12);
        }
    }
}

/// Direct sliding-window cross-correlation with explicit zero padding.
fn conv_oracle(x: &[f64], len: usize, w: &Tensor<f64>, bias: &[f64], left: usize, right: usize, groups: usize) -> Vec<f64> {
    let (c_out, cin_g, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let out_len = len + left + right + 1 - k;
    let per_group_out = c_out / groups;
    let mut y = vec![0.0; c_out * out_len];
    for o in 0..c_out {
        let g = o / per_group_out;
        for t in 0..out_len {
            let mut acc = bias[o];
            for ci in 0..cin_g {
                let channel = g * cin_g + ci;
                for j in 0..k {
                    let pos = (t + j) as isize - left as isize;
                    if pos >= 0 && (pos as usize) < len {
                        acc += w.data()[(o * cin_g + ci) * k + j] * x[channel * len + pos as usize];
                    }
                }
            }
            y[o * out_len + t] = acc;
        }
    }
    y
}

#[test]
fn conv1d_matches_sliding_window() {
    let mut r = rng(2);
    for case in 0..40 {
        let groups = [1, 2, 4][case % 3];
        let c_in = groups * r.random_range(1..3);
        let c_out = groups * r.random_range(1..3);
        let k = r.random_range(1..5);
        let len = r.random_range(k..12);
        let x = uniform(&mut r, &[1, c_in, len], 1.0);
        let w = uniform(&mut r, &[c_out, c_in / groups, k], 1.0);
        let bias = uniform(&mut r, &[c_out], 1.0);
        for (padding, left, right) in [
            (Padding::Valid, 0, 0),
            (Padding::Same, (k - 1) / 2, k - 1 - (k - 1) / 2),
            (Padding::Causal, k - 1, 0),
        ] {
            let mut t = Tape::<f64>::new();
            let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(bias.clone()));
            let y = t.conv1d(xv, wv, Some(bv), padding, groups).unwrap();
            let want = conv_oracle(x.data(), len, &w, bias.data(), left, right, groups);
            assert!(max_abs_diff(t.data(y), &want) < 1e-12, "{padding:?} groups={groups} k={k}");
        }
    }
}

#[test]
fn mamba_is_causal_in_time() {
    let m = Mamba {
        dim: 6,
        d_state: 4,
        d_conv: 2,
        expand: 2,
    };
    let params = random_store(&m.specs("m"), 3, 0.5);
    let p = 7;
    let x = uniform(&mut rng(4), &[1, p, 6], 1.0);
    let run = |x: &Tensor<f64>| {
        let mut t = Tape::new();
        let b = params.bind_frozen(&mut t);
        let xv = t.constant(x.clone());
        let y = m.forward(&mut t, &b, "m", xv).unwrap();
        t.data(y).to_vec()
    };
    let base = run(&x);
    for j in 0..p {
        let mut pert = x.clone();
        pert.data_mut()[j * 6 + 2] += 1.0;
        let out = run(&pert);
        assert_eq!(&out[..j * 6], &base[..j * 6], "step {j} leaked backwards");
        assert_ne!(&out[j * 6..(j + 1) * 6], &base[j * 6..(j + 1) * 6]);
    }
}

fn rms(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let r = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64 + RMS_EPS).sqrt();
    x.iter().zip(gain).map(|(v, g)| v / r * g).collect()
}

#[test]
fn weighter_matches_formula() {
    let (dim, p) = (9, 5);
    let w = Weighter::new(dim, Some(7), FusionStrategy::ParallelTime, WeightActivation::Sigmoid);
    assert_eq!(w.compressed, 3);
    let params = random_store(&w.specs("w"), 5, 1.0);
    let mut r = rng(6);
    let a = uniform(&mut r, &[1, p, dim], 2.0);
    let m = uniform(&mut r, &[1, p, dim], 2.0);
    let mut t = Tape::<f64>::new();
    let b = params.bind_frozen(&mut t);
    let (av, mv) = (t.constant(a.clone()), t.constant(m.clone()));
    let fused = w.fuse(&mut t, &b, "w", av, mv).unwrap();
    let get = |n: &str| params.get(&format!("w.{n}")).unwrap();
    for row in 0..p {
        let ar = &a.data()[row * dim..(row + 1) * dim];
        let mr = &m.data()[row * dim..(row + 1) * dim];
        let ca = linear(&rms(ar, get("rms_att").data()), 1, get("w_att.weight"), None);
        let cm = linear(&rms(mr, get("rms_mamba").data()), 1, get("w_mamba.weight"), None);
        let cat: Vec<f64> = ca.into_iter().chain(cm).collect();
        let h: Vec<f64> = linear(&cat, 1, get("w1.weight"), Some(get("w1.bias")))
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let logits = linear(&h, 1, get("w2.weight"), Some(get("w2.bias")));
        let wts: Vec<f64> = logits.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect();
        let got_w = &t.data(fused.weights.unwrap())[row * 2..row * 2 + 2];
        assert!(max_abs_diff(got_w, &wts) < 1e-12);
        let out: Vec<f64> = ar.iter().zip(mr).map(|(x, y)| wts[0] * x + wts[1] * y).collect();
        assert!(max_abs_diff(&t.data(fused.out)[row * dim..(row + 1) * dim], &out) < 1e-12);
    }
}

#[test]
fn softmax_weights_sum_to_one() {
    let w = Weighter::new(8, None, FusionStrategy::ParallelTime, WeightActivation::Softmax);
    let params = random_store(&w.specs("w"), 7, 1.0);
    let mut r = rng(8);
    let mut t = Tape::<f64>::new();
    let b = params.bind_frozen(&mut t);
    let a = t.constant(uniform(&mut r, &[2, 4, 8], 1.0));
    let m = t.constant(uniform(&mut r, &[2, 4, 8], 1.0));
    let wts = w.compute_weights(&mut t, &b, "w", a, m).unwrap();
    for pair in t.data(wts).chunks(2) {
        assert!((pair[0] + pair[1] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn weights_ignore_a_common_rescaling_of_each_patch() {
    let w = Weighter::new(8, None, FusionStrategy::ParallelTime, WeightActivation::Sigmoid);
    let params = random_store(&w.specs("w"), 9, 1.0);
    let mut r = rng(10);
    let a = uniform(&mut r, &[1, 3, 8], 1.0);
    let m = uniform(&mut r, &[1, 3, 8], 1.0);
    let weights = |a: &Tensor<f64>, m: &Tensor<f64>| {
        let mut t = Tape::new();
        let b = params.bind_frozen(&mut t);
        let (av, mv) = (t.constant(a.clone()), t.constant(m.clone()));
        let v = w.compute_weights(&mut t, &b, "w", av, mv).unwrap();
        t.data(v).to_vec()
    };
    let scaled = |x: &Tensor<f64>| Tensor::from_fn(x.shape(), |i| x.data()[i] * [3.0, 0.2, 7.5][i / 8]);
    // RMS_EPS makes the invariance approximate rather than exact
    assert!(max_abs_diff(&weights(&a, &m), &weights(&scaled(&a), &scaled(&m))) < 1e-5);
}

#[test]
fn degenerate_ecp_equals_standard_head() {
    let cfg = ModelConfig {
        lookback: 64,
        horizon: 12,
        dim: 6,
        heads: 2,
        ..ModelConfig::default()
    };
    let standard = Head::new(&ModelConfig {
        head: HeadKind::Standard,
        ..cfg.clone()
    });
    let ecp = Head {
        kind: HeadKind::Ecp,
        expanded: cfg.dim,
        compressed: cfg.dim,
        silu: false,
        ..standard
    };
    let std_params = random_store(&standard.specs("h"), 11, 1.0);
    let mut ecp_params = std_params.clone();
    let eye = Tensor::from_fn(&[6, 6], |i| if i / 6 == i % 6 { 1.0 } else { 0.0 });
    for name in ["expand", "compress"] {
        ecp_params.insert(format!("h.{name}.weight"), eye.clone());
        ecp_params.insert(format!("h.{name}.bias"), Tensor::zeros(&[6]));
    }
    let tokens = uniform(&mut rng(12), &[3, cfg.n_patches(), 6], 1.0);
    let run = |head: &Head, params: &ParamStore<f64>| {
        let mut t = Tape::new();
        let b = params.bind_frozen(&mut t);
        let x = t.constant(tokens.clone());
        let y = head.forward(&mut t, &b, "h", x, &mut Mode::Eval).unwrap();
        t.data(y).to_vec()
    };
    assert!(max_abs_diff(&run(&standard, &std_params), &run(&ecp, &ecp_params)) < 1e-12);
}

#[test]
fn ecp_head_is_smaller_than_standard_at_every_horizon() {
    for h in [96, 192, 336, 720] {
        let ecp = ParallelTime::new(ModelConfig { horizon: h, ..ModelConfig::default() }).unwrap();
        let std = ParallelTime::new(ModelConfig {
            horizon: h,
            head: HeadKind::Standard,
            ..ModelConfig::default()
        })
        .unwrap();
        assert!(ecp.count_params() < std.count_params(), "H={h}");
    }
}

#[test]
fn attention_without_registers_or_window_limit_is_causal_attention() {
    let (p, dim) = (6, 4);
    let full = WindowedAttention {
        dim,
        heads: 2,
        window: p,
        registers: 0,
        n_patches: p,
        dropout: 0.0,
    };
    let params = random_store(&full.specs("a"), 13, 1.0);
    let x = uniform(&mut rng(14), &[1, p, dim], 1.0);
    let mut t = Tape::<f64>::new();
    let b = params.bind_frozen(&mut t);
    let xv = t.constant(x.clone());
    let y = full.forward(&mut t, &b, "a", xv, &mut Mode::Eval).unwrap();
    let want = attention_oracle(x.data(), &params, "a", p, dim, 2, 0, p);
    assert!(max_abs_diff(t.data(y), &want) < 1e-12);
    // the first patch can only see itself, so its context is its own value vector
    let v = linear(&x.data()[..dim], 1, params.get("a.v.weight").unwrap(), Some(params.get("a.v.bias").unwrap()));
    let first = linear(&v, 1, params.get("a.o.weight").unwrap(), Some(params.get("a.o.bias").unwrap()));
    assert!(max_abs_diff(&t.data(y)[..dim], &first) < 1e-12);
}

#[test]
fn mean_and_sum_strategies_by_hand() {
    let dim = 4;
    let mean = Weighter::new(dim, None, FusionStrategy::Mean, WeightActivation::Sigmoid);
    let sum = Weighter::new(dim, None, FusionStrategy::Sum, WeightActivation::Sigmoid);
    let params = random_store(&mean.specs("w"), 17, 1.0);
    let mut r = rng(18);
    let a = uniform(&mut r, &[1, 2, dim], 1.0);
    let m = uniform(&mut r, &[1, 2, dim], 1.0);
    for (w, scale) in [(mean, 0.5), (sum, 1.0)] {
        let mut t = Tape::<f64>::new();
        let b = params.bind_frozen(&mut t);
        let (av, mv) = (t.constant(a.clone()), t.constant(m.clone()));
        let f = w.fuse(&mut t, &b, "w", av, mv).unwrap();
        assert!(f.weights.is_none());
        for row in 0..2 {
            let ra = rms(&a.data()[row * dim..(row + 1) * dim], params.get("w.rms_att").unwrap().data());
            let rm = rms(&m.data()[row * dim..(row + 1) * dim], params.get("w.rms_mamba").unwrap().data());
            let want: Vec<f64> = ra.iter().zip(&rm).map(|(x, y)| scale * (x + y)).collect();
            assert!(max_abs_diff(&t.data(f.out)[row * dim..(row + 1) * dim], &want) < 1e-12);
        }
    }
}
