//! Finite-difference checks of every differentiable tape op, in f64.

use paralleltime::numcore::{grad_check_params, Bound, Padding, ParamStore, Tape, Tensor, Var};
use paralleltime::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn store(seed: u64, tensors: &[(&str, &[usize])]) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (name, shape) in tensors {
        let t = Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
        s.insert(*name, t);
    }
    s
}

/// Reduce any output to a scalar with fixed pseudo-random weights so every
/// output coordinate contributes a distinct gradient.
fn weigh(t: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = t.shape(y).to_vec();
    let w = Tensor::from_fn(&shape, |i| ((i * 7919) % 13) as f64 / 13.0 - 0.4);
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn check(params: &ParamStore<f64>, f: impl Fn(&mut Tape<f64>, &Bound) -> Result<Var>) {
    let report = grad_check_params(
        |t, b| {
            let y = f(t, b)?;
            weigh(t, y)
        },
        params,
        STEP,
        TOL,
        None,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    assert!(report.checked > 0);
}

#[test]
fn broadcasting_binary_ops() {
    let p = store(1, &[("a", &[2, 3, 4]), ("b", &[3, 1]), ("c", &[4])]);
    check(&p, |t, b| {
        let (x, y, z) = (b.get("a")?, b.get("b")?, b.get("c")?);
        let s = t.add(x, y)?;
        let m = t.mul(s, z)?;
        let d = t.sub(m, y)?;
        let two = t.constant(Tensor::full(&[4], 2.5));
        let zz = t.mul(z, z)?;
        let den = t.add(zz, two)?;
        t.div(d, den)
    });
}

#[test]
fn unary_ops() {
    let p = store(2, &[("x", &[3, 5])]);
    check(&p, |t, b| {
        let x = b.get("x")?;
        let parts = [t.sigmoid(x), t.silu(x), t.exp(x), t.neg(x), t.softplus(x)];
        let sc = t.scale(x, 0.3);
        let sh = t.add_scalar(sc, 1.5);
        let mut acc = sh;
        for q in parts {
            acc = t.add(acc, q)?;
        }
        Ok(acc)
    });
}

#[test]
fn relu_away_from_kink() {
    let mut p = store(3, &[("x", &[10])]);
    p.get_mut("x").unwrap().data_mut().iter_mut().for_each(|v| {
        if v.abs() < 0.1 {
            *v += 0.3;
        }
    });
    check(&p, |t, b| Ok(t.relu(b.get("x")?)));
}

#[test]
fn matmul_batching_modes() {
    let p = store(4, &[("a", &[2, 3, 4]), ("w", &[4, 5]), ("m", &[3, 4]), ("b", &[2, 4, 2])]);
    check(&p, |t, b| {
        let rows = t.matmul(b.get("a")?, b.get("w")?)?;
        let shared = t.matmul(b.get("m")?, b.get("b")?)?;
        let paired = t.matmul(b.get("a")?, b.get("b")?)?;
        let r = t.sum(rows);
        let s = t.sum(shared);
        let q = weigh(t, paired)?;
        let rs = t.add(r, s)?;
        t.add(rs, q)
    });
}

#[test]
fn norms() {
    let p = store(5, &[("x", &[3, 6]), ("g", &[6]), ("b", &[6])]);
    check(&p, |t, b| {
        let ln = t.layer_norm(b.get("x")?, b.get("g")?, b.get("b")?, 1e-5)?;
        let rms = t.rms_norm(b.get("x")?, b.get("g")?, 1e-6)?;
        t.add(ln, rms)
    });
}

#[test]
fn conv1d_grouped_and_padded() {
    for (padding, groups, c_out) in [(Padding::Causal, 4, 4), (Padding::Same, 1, 3), (Padding::Valid, 2, 6)] {
        let cin_g = 4 / groups;
        let p = store(6, &[("x", &[2, 4, 7]), ("w", &[c_out, cin_g, 3]), ("b", &[c_out])]);
        check(&p, |t, b| t.conv1d(b.get("x")?, b.get("w")?, Some(b.get("b")?), padding, groups));
    }
}

#[test]
fn layout_ops() {
    let p = store(7, &[("x", &[2, 3, 4]), ("y", &[2, 2, 4]), ("r", &[1, 4])]);
    check(&p, |t, b| {
        let x = b.get("x")?;
        let c = t.concat(&[x, b.get("y")?, x], 1)?;
        let s = t.slice(c, 1, 2, 4)?;
        let pm = t.permute(s, &[2, 0, 1])?;
        let rs = t.reshape(pm, &[8, 4])?;
        let tr = t.transpose(rs, 0, 1)?;
        let e = t.expand(b.get("r")?, &[3, 4])?;
        let ml = t.mean_last(tr)?;
        let sm = t.softmax_last(e);
        let a = t.sum(ml);
        let bsum = weigh(t, sm)?;
        let mean = t.mean(x);
        let ab = t.add(a, bsum)?;
        t.add(ab, mean)
    });
}

#[test]
fn masked_attention_with_dropout() {
    let p = store(8, &[("q", &[2, 3, 4]), ("k", &[2, 5, 4]), ("v", &[2, 5, 4])]);
    let mask: Vec<bool> = (0..15).map(|i| (i % 5) <= (i / 5) + 2).collect();
    let keep = Tensor::from_fn(&[2, 3, 5], |i| if i % 4 == 1 { 0.0 } else { 1.25 });
    check(&p, |t, b| {
        t.masked_attention(b.get("q")?, b.get("k")?, b.get("v")?, &mask, 0.5, Some(keep.clone()))
    });
}

#[test]
fn selective_scan_all_inputs() {
    let mut p = store(
        9,
        &[("u", &[2, 5, 3]), ("dt", &[2, 5, 3]), ("a", &[3, 2]), ("b", &[2, 5, 2]), ("c", &[2, 5, 2]), ("d", &[3])],
    );
    // keep delta positive and A negative as in the model
    p.get_mut("dt").unwrap().data_mut().iter_mut().for_each(|v| *v = v.abs() * 0.5 + 0.05);
    p.get_mut("a").unwrap().data_mut().iter_mut().for_each(|v| *v = -(v.abs() + 0.1));
    check(&p, |t, b| {
        t.selective_scan(b.get("u")?, b.get("dt")?, b.get("a")?, b.get("b")?, b.get("c")?, b.get("d")?)
    });
}

#[test]
fn huber_both_regimes() {
    let p = store(10, &[("p", &[12]), ("y", &[12])]);
    let report = grad_check_params(
        |t, b| {
            let scaled = t.scale(b.get("p")?, 3.0);
            t.huber(scaled, b.get("y")?, 1.0)
        },
        &p,
        STEP,
        TOL,
        None,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}
