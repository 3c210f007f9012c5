//! Reverse-mode tape. Every op evaluates eagerly, stores its output on the tape, and
//! records what it needs for the backward rule. A tape supports exactly one
//! backward pass.

use std::sync::Arc;

use super::flops;
use super::kernels::{self, AttnGeom, ConvGeom, ScanGeom, ScanGrads};
use super::shape::{broadcast_shape, strides, Layout};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Sigmoid,
    Relu,
    Silu,
    Exp,
    Neg,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Padding applied on the length axis of [`Tape::conv1d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// `(k-1)/2` zeros on the left, the rest on the right.
    Same,
    /// `k-1` zeros on the left: output `t` sees inputs `..=t`.
    Causal,
}

impl Padding {
    fn amounts(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => ((k - 1) / 2, k - 1 - (k - 1) / 2),
            Padding::Causal => (k - 1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum MatBatch {
    /// `b` is a plain matrix; all leading axes of `a` fold into rows.
    Rows(usize),
    /// `a` is a plain matrix shared across the batches of `b`.
    SharedLhs(usize),
    /// Both operands carry the same batch axes.
    Paired(usize),
}

enum Op<T> {
    Leaf,
    Binary {
        kind: BinKind,
        a: Var,
        b: Var,
    },
    Unary {
        kind: UnaryKind,
        x: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    AddScalar {
        x: Var,
    },
    MatMul {
        a: Var,
        b: Var,
        batch: MatBatch,
        m: usize,
        k: usize,
        n: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    RmsNorm {
        x: Var,
        gain: Var,
        xn: Vec<T>,
        rrms: Vec<T>,
    },
    Conv1d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Expand {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    MeanLast {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        visible: Arc<Vec<Vec<usize>>>,
        scale: T,
        dropout: Option<Vec<T>>,
        probs: Vec<T>,
        geom: AttnGeom,
    },
    Scan {
        u: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d: Var,
        states: Vec<T>,
        geom: ScanGeom,
    },
    Huber {
        pred: Var,
        target: Var,
        delta: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of operations; nodes only reference earlier nodes.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
    kink_signature: u64,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            kink_signature: FNV_OFFSET,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a leaf; it receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Gradient of the loss with respect to `v`, after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Hash of every relu activation pattern seen so far; two evaluations of the
    /// same graph sit on the same smooth piece iff their signatures agree.
    pub fn kink_signature(&self) -> u64 {
        self.kink_signature
    }

    // ---------------------------------------------------------------- elementwise

    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).map_err(|_| Error::shape(kind.name(), &sa, &sb))?;
        let la = Layout::new(&sa, &out_shape);
        let lb = Layout::new(&sb, &out_shape);
        let (da, db) = (self.data(a), self.data(b));
        let n: usize = out_shape.iter().product();
        let f: fn(T, T) -> T = match kind {
            BinKind::Add => |x, y| x + y,
            BinKind::Sub => |x, y| x - y,
            BinKind::Mul => |x, y| x * y,
            BinKind::Div => |x, y| x / y,
        };
        let data: Vec<T> = match (&la, &lb) {
            (Layout::Same, Layout::Same) => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..n).map(|i| f(da[la.index(i)], db[lb.index(i)])).collect(),
        };
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(value, Op::Binary { kind, a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Div, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let xs = self.value(x);
        let shape = xs.shape().to_vec();
        let data: Vec<T> = xs.data().iter().map(|&v| unary_fwd(kind, v)).collect();
        if kind == UnaryKind::Relu {
            let mut h = self.kink_signature;
            for &v in xs.data() {
                h = (h ^ u64::from(v > T::zero())).wrapping_mul(FNV_PRIME);
            }
            self.kink_signature = h;
        }
        let value = Tensor::new(&shape, data).expect("same shape");
        self.push(value, Op::Unary { kind, x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Silu, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Neg, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Softplus, x)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let xs = self.value(x);
        let value = Tensor::new(xs.shape(), xs.data().iter().map(|&v| v * c).collect()).expect("same shape");
        self.push(value, Op::Scale { x, c }, &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let xs = self.value(x);
        let value = Tensor::new(xs.shape(), xs.data().iter().map(|&v| v + c).collect()).expect("same shape");
        self.push(value, Op::AddScalar { x }, &[x])
    }

    // ---------------------------------------------------------------- linear algebra

    /// Batched matrix product `[.., m, k] × [.., k, n]`. Batch axes must be equal,
    /// or one operand must be a plain matrix.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let (batch, mut out_shape) = if bb.is_empty() {
            (MatBatch::Rows(ba.iter().product::<usize>() * m), ba.to_vec())
        } else if ba.is_empty() {
            (MatBatch::SharedLhs(bb.iter().product()), bb.to_vec())
        } else if ba == bb {
            (MatBatch::Paired(ba.iter().product()), ba.to_vec())
        } else {
            return Err(Error::shape("matmul", &sa, &sb));
        };
        out_shape.extend_from_slice(&[m, n]);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = vec![T::zero(); out_shape.iter().product()];
        match batch {
            MatBatch::Rows(rows) => kernels::gemm_nn(da, db, &mut out, rows, k, n),
            MatBatch::SharedLhs(nb) => {
                for i in 0..nb {
                    kernels::gemm_nn(da, &db[i * k * n..(i + 1) * k * n], &mut out[i * m * n..(i + 1) * m * n], m, k, n);
                }
            }
            MatBatch::Paired(nb) => {
                for i in 0..nb {
                    kernels::gemm_nn(
                        &da[i * m * k..(i + 1) * m * k],
                        &db[i * k * n..(i + 1) * k * n],
                        &mut out[i * m * n..(i + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
            }
        }
        flops::add_macs(out.len() * k);
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b, batch, m, k, n }, &[a, b]))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let dim = *shape.last().expect("non-empty shape");
        if self.shape(gain) != [dim] || self.shape(bias) != [dim] {
            return Err(Error::shape("layer_norm", &shape, self.shape(gain)));
        }
        let (xd, g, b) = (self.data(x), self.data(gain), self.data(bias));
        let rows = xd.len() / dim;
        let inv_n = T::one() / T::of(dim as f64);
        let mut xhat = vec![T::zero(); xd.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * dim..(r + 1) * dim];
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..dim {
                let h = (row[j] - mean) * rs;
                xhat[r * dim + j] = h;
                out[r * dim + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias]))
    }

    /// Scales the last axis by `1/sqrt(mean(x²)+eps)`, then applies `gain`.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let dim = *shape.last().expect("non-empty shape");
        if self.shape(gain) != [dim] {
            return Err(Error::shape("rms_norm", &shape, self.shape(gain)));
        }
        let (xd, g) = (self.data(x), self.data(gain));
        let rows = xd.len() / dim;
        let inv_n = T::one() / T::of(dim as f64);
        let mut xn = vec![T::zero(); xd.len()];
        let mut rrms = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * dim..(r + 1) * dim];
            let ms = row.iter().map(|&v| v * v).sum::<T>() * inv_n;
            let rr = T::one() / (ms + eps).sqrt();
            rrms[r] = rr;
            for j in 0..dim {
                let h = row[j] * rr;
                xn[r * dim + j] = h;
                out[r * dim + j] = h * g[j];
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::RmsNorm { x, gain, xn, rrms }, &[x, gain]))
    }

    /// Grouped cross-correlation over the last axis of `x: [.., c_in, len]` with
    /// `w: [c_out, c_in/groups, k]` and optional `bias: [c_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, padding: Padding, groups: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() < 2 || sw.len() != 3 || groups == 0 {
            return Err(Error::shape("conv1d", &sx, &sw));
        }
        let (c_in, len_in) = (sx[sx.len() - 2], sx[sx.len() - 1]);
        let (c_out, cin_g, kernel) = (sw[0], sw[1], sw[2]);
        if c_in % groups != 0 || c_out % groups != 0 || cin_g * groups != c_in {
            return Err(Error::shape("conv1d", &sx, &sw));
        }
        let (pl, pr) = padding.amounts(kernel);
        if kernel > len_in + pl + pr {
            return Err(Error::shape("conv1d", &sx, &sw));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::shape("conv1d bias", self.shape(b), &[c_out]));
            }
        }
        let batch: usize = sx[..sx.len() - 2].iter().product();
        let geom = ConvGeom {
            batch,
            c_in,
            c_out,
            len_in,
            len_out: len_in + pl + pr - kernel + 1,
            kernel,
            pad_left: pl,
            groups,
        };
        let mut out = vec![T::zero(); batch * c_out * geom.len_out];
        kernels::conv1d_forward(self.data(x), self.data(w), bias.map(|b| self.data(b)), &mut out, geom);
        flops::add_macs(geom.macs());
        let mut shape = sx[..sx.len() - 2].to_vec();
        shape.extend_from_slice(&[c_out, geom.len_out]);
        let value = Tensor::new(&shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(value, Op::Conv1d { x, w, bias, geom }, &inputs))
    }

    // ---------------------------------------------------------------- layout

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().with_requires_grad(false);
        let value = value.reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", &shape, perm));
        }
        let (data, new_shape) = permute_data(self.data(x), &shape, perm);
        let value = Tensor::new(&new_shape, data)?;
        Ok(self.push(value, Op::Permute { x, perm: perm.to_vec() }, &[x]))
    }

    pub fn transpose(&mut self, x: Var, d0: usize, d1: usize) -> Result<Var> {
        let mut perm: Vec<usize> = (0..self.shape(x).len()).collect();
        if d0 >= perm.len() || d1 >= perm.len() {
            return Err(Error::shape("transpose", self.shape(x), &[d0, d1]));
        }
        perm.swap(d0, d1);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len() || s[..axis] != first[..axis] || s[axis + 1..] != first[axis + 1..] {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Concat { xs: xs.to_vec(), axis }, xs))
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("slice", &shape, &[axis, start, len]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&xd[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let value = Tensor::new(&new_shape, out)?;
        Ok(self.push(value, Op::Slice { x, axis, start }, &[x]))
    }

    /// Broadcast `x` to `shape`.
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if broadcast_shape(&sx, shape)? != shape {
            return Err(Error::shape("expand", &sx, shape));
        }
        let layout = Layout::new(&sx, shape);
        let xd = self.data(x);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| xd[layout.index(i)]).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Expand { x }, &[x]))
    }

    // ---------------------------------------------------------------- reductions

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().copied().sum::<T>() / T::of(d.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean { x }, &[x])
    }

    /// Mean over the last axis.
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let last = *shape.last().expect("non-empty shape");
        let inv = T::one() / T::of(last as f64);
        let data: Vec<T> = self.data(x).chunks(last).map(|c| c.iter().copied().sum::<T>() * inv).collect();
        let out_shape = if shape.len() == 1 { vec![1] } else { shape[..shape.len() - 1].to_vec() };
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(value, Op::MeanLast { x }, &[x]))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let last = *shape.last().expect("non-empty shape");
        let mut data = self.data(x).to_vec();
        for row in data.chunks_mut(last) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let value = Tensor::new(&shape, data).expect("same shape");
        self.push(value, Op::Softmax { x }, &[x])
    }

    // ---------------------------------------------------------------- fused blocks

    /// Masked scaled-dot-product attention.
    ///
    /// `q: [.., tq, hd]`, `k`/`v`: `[.., tk, hd]` with identical leading axes.
    /// `mask` is a row-major `[tq, tk]` visibility matrix shared across the leading
    /// axes; every row must see at least one key. `dropout`, when given, multiplies the
    /// probabilities elementwise and has shape `[.., tq, tk]`.
    pub fn masked_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: &[bool],
        scale: T,
        dropout: Option<Tensor<T>>,
    ) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if sq.len() < 2 || sk != sv || sk.len() != sq.len() || sq[..sq.len() - 2] != sk[..sk.len() - 2] || sq[sq.len() - 1] != sk[sk.len() - 1] {
            return Err(Error::shape("masked_attention", &sq, &sk));
        }
        let nd = sq.len();
        let geom = AttnGeom {
            heads: sq[..nd - 2].iter().product(),
            tq: sq[nd - 2],
            tk: sk[nd - 2],
            hd: sq[nd - 1],
        };
        if mask.len() != geom.tq * geom.tk {
            return Err(Error::shape("attention mask", &[mask.len()], &[geom.tq, geom.tk]));
        }
        let visible: Vec<Vec<usize>> = mask
            .chunks(geom.tk)
            .map(|row| row.iter().enumerate().filter(|(_, &m)| m).map(|(j, _)| j).collect())
            .collect();
        if let Some(i) = visible.iter().position(|r| r.is_empty()) {
            return Err(Error::Contract(format!("attention query row {i} sees no key")));
        }
        let dropout = match dropout {
            Some(t) => {
                let mut want = sq[..nd - 2].to_vec();
                want.extend_from_slice(&[geom.tq, geom.tk]);
                if t.shape() != want.as_slice() {
                    return Err(Error::shape("attention dropout", t.shape(), &want));
                }
                Some(t.into_data())
            }
            None => None,
        };
        let mut out = vec![T::zero(); geom.heads * geom.tq * geom.hd];
        let mut probs = vec![T::zero(); geom.heads * geom.tq * geom.tk];
        kernels::attention_forward(
            self.data(q),
            self.data(k),
            self.data(v),
            &visible,
            scale,
            dropout.as_deref(),
            &mut out,
            &mut probs,
            geom,
        );
        let pairs: usize = visible.iter().map(Vec::len).sum();
        flops::add_macs(2 * geom.heads * pairs * geom.hd);
        let value = Tensor::new(&sq, out)?;
        let op = Op::Attention {
            q,
            k,
            v,
            visible: Arc::new(visible),
            scale,
            dropout,
            probs,
            geom,
        };
        Ok(self.push(value, op, &[q, k, v]))
    }

    /// Selective state-space scan over `[batch, steps, channels]` inputs.
    ///
    /// Shapes: `u`, `delta`: `[b, p, d]`; `a`: `[d, n]`; `bm`, `c`: `[b, p, n]`;
    /// `d_skip`: `[d]`. Output `[b, p, d]`.
    pub fn selective_scan(&mut self, u: Var, delta: Var, a: Var, bm: Var, c: Var, d_skip: Var) -> Result<Var> {
        let su = self.shape(u).to_vec();
        if su.len() != 3 || self.shape(delta) != su.as_slice() {
            return Err(Error::shape("selective_scan", &su, self.shape(delta)));
        }
        let (batch, steps, channels) = (su[0], su[1], su[2]);
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || sa[0] != channels {
            return Err(Error::shape("selective_scan A", &sa, &[channels]));
        }
        let state = sa[1];
        for v in [bm, c] {
            if self.shape(v) != [batch, steps, state] {
                return Err(Error::shape("selective_scan B/C", self.shape(v), &[batch, steps, state]));
            }
        }
        if self.shape(d_skip) != [channels] {
            return Err(Error::shape("selective_scan D", self.shape(d_skip), &[channels]));
        }
        let geom = ScanGeom {
            batch,
            steps,
            channels,
            state,
        };
        let mut y = vec![T::zero(); batch * steps * channels];
        let mut states = vec![T::zero(); batch * steps * channels * state];
        kernels::scan_forward(
            self.data(u),
            self.data(delta),
            self.data(a),
            self.data(bm),
            self.data(c),
            self.data(d_skip),
            &mut y,
            &mut states,
            geom,
        );
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                op: format!("selective_scan step {}", (i / channels) % steps),
                index: i,
            });
        }
        flops::add_macs(geom.macs());
        let value = Tensor::new(&su, y)?;
        let op = Op::Scan {
            u,
            delta,
            a,
            b: bm,
            c,
            d: d_skip,
            states,
            geom,
        };
        Ok(self.push(value, op, &[u, delta, a, bm, c, d_skip]))
    }

    /// Mean Huber loss between `pred` and `target`.
    pub fn huber(&mut self, pred: Var, target: Var, delta: T) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape("huber", self.shape(pred), self.shape(target)));
        }
        let loss = crate::train::huber_loss(self.data(pred), self.data(target), delta);
        Ok(self.push(Tensor::scalar(loss), Op::Huber { pred, target, delta }, &[pred, target]))
    }

    // ---------------------------------------------------------------- backward

    /// Populate gradients of the scalar `loss` with respect to every node that
    /// depends on a `requires_grad` leaf. Leaf tensors receive their gradient in
    /// their own grad slot.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract("backward already ran on this tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let Tape { nodes, grads, .. } = self;
        grads.clear();
        grads.resize_with(nodes.len(), || None);
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if nodes[i].needs_grad {
                backward_node(nodes, grads, i, &g);
            }
            grads[i] = Some(g);
        }
        for (node, g) in nodes.iter_mut().zip(grads.iter()) {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                let g = g.clone().unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                node.value.set_grad(g);
            }
        }
        Ok(())
    }
}

impl BinKind {
    fn name(self) -> &'static str {
        match self {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        }
    }
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn unary_fwd<T: Real>(kind: UnaryKind, v: T) -> T {
    match kind {
        UnaryKind::Sigmoid => sigmoid(v),
        UnaryKind::Relu => v.max(T::zero()),
        UnaryKind::Silu => v * sigmoid(v),
        UnaryKind::Exp => v.exp(),
        UnaryKind::Neg => -v,
        UnaryKind::Softplus => {
            if v > T::of(20.0) {
                v
            } else {
                v.exp().ln_1p()
            }
        }
    }
}

fn unary_grad<T: Real>(kind: UnaryKind, x: T, y: T) -> T {
    match kind {
        UnaryKind::Sigmoid => y * (T::one() - y),
        UnaryKind::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        UnaryKind::Silu => {
            let s = sigmoid(x);
            s + x * s * (T::one() - s)
        }
        UnaryKind::Exp => y,
        UnaryKind::Neg => -T::one(),
        UnaryKind::Softplus => sigmoid(x),
    }
}

/// Row-major permutation of `data` laid out as `shape`.
fn permute_data<T: Real>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<T>, Vec<usize>) {
    let new_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let nd = new_shape.len();
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(data[off]);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < new_shape[ax] {
                break;
            }
            off -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    (out, new_shape)
}

/// Add into the gradient buffer of `v` (allocating it on first use) if `v` needs one.
fn acc<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()]);
    f(buf);
}

/// Temporarily take the gradient buffer of `v` out of `grads` so several inputs can
/// be written by one kernel call.
fn take_buf<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var) -> Option<Vec<T>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    Some(grads[v.0].take().unwrap_or_else(|| vec![T::zero(); nodes[v.0].value.numel()]))
}

/// Gradient buffers for aliased inputs (same `Var` passed twice) must be merged; this
/// takes distinct buffers and sums duplicates back at the end.
struct Scratch<T> {
    bufs: Vec<(Var, Option<Vec<T>>)>,
}

impl<T: Real> Scratch<T> {
    fn take(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], vars: &[Var]) -> Self {
        let bufs = vars
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let dup = vars[..i].contains(&v);
                let buf = if dup {
                    nodes[v.0].needs_grad.then(|| vec![T::zero(); nodes[v.0].value.numel()])
                } else {
                    take_buf(nodes, grads, v)
                };
                (v, buf)
            })
            .collect();
        Scratch { bufs }
    }

    fn restore(self, grads: &mut [Option<Vec<T>>]) {
        for (v, buf) in self.bufs {
            let Some(b) = buf else { continue };
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&b).for_each(|(e, x)| *e += *x),
                slot => *slot = Some(b),
            }
        }
    }
}

fn backward_node<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], i: usize, g: &[T]) {
    let node = &nodes[i];
    let out_shape = node.value.shape();
    match &node.op {
        Op::Leaf => {}
        Op::Binary { kind, a, b } => {
            let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            let la = Layout::new(nodes[a.0].value.shape(), out_shape);
            let lb = Layout::new(nodes[b.0].value.shape(), out_shape);
            match kind {
                BinKind::Add | BinKind::Sub => {
                    acc(nodes, grads, *a, |ga| {
                        for (j, &gj) in g.iter().enumerate() {
                            ga[la.index(j)] += gj;
                        }
                    });
                    let sign = if *kind == BinKind::Add { T::one() } else { -T::one() };
                    acc(nodes, grads, *b, |gb| {
                        for (j, &gj) in g.iter().enumerate() {
                            gb[lb.index(j)] += sign * gj;
                        }
                    });
                }
                BinKind::Mul => {
                    acc(nodes, grads, *a, |ga| {
                        for (j, &gj) in g.iter().enumerate() {
                            ga[la.index(j)] += gj * vb[lb.index(j)];
                        }
                    });
                    acc(nodes, grads, *b, |gb| {
                        for (j, &gj) in g.iter().enumerate() {
                            gb[lb.index(j)] += gj * va[la.index(j)];
                        }
                    });
                }
                BinKind::Div => {
                    acc(nodes, grads, *a, |ga| {
                        for (j, &gj) in g.iter().enumerate() {
                            ga[la.index(j)] += gj / vb[lb.index(j)];
                        }
                    });
                    acc(nodes, grads, *b, |gb| {
                        for (j, &gj) in g.iter().enumerate() {
                            let y = vb[lb.index(j)];
                            gb[lb.index(j)] -= gj * va[la.index(j)] / (y * y);
                        }
                    });
                }
            }
        }
        Op::Unary { kind, x } => {
            let (xv, yv) = (nodes[x.0].value.data(), node.value.data());
            acc(nodes, grads, *x, |gx| {
                for j in 0..g.len() {
                    gx[j] += g[j] * unary_grad(*kind, xv[j], yv[j]);
                }
            });
        }
        Op::Scale { x, c } => acc(nodes, grads, *x, |gx| {
            gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b * *c);
        }),
        Op::AddScalar { x } | Op::Reshape { x } => acc(nodes, grads, *x, |gx| {
            gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }),
        Op::MatMul { a, b, batch, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let (da, db) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            let mut s = Scratch::take(nodes, grads, &[*a, *b]);
            let (left, right) = s.bufs.split_at_mut(1);
            let (ga, gb) = (left[0].1.as_deref_mut(), right[0].1.as_deref_mut());
            match *batch {
                MatBatch::Rows(rows) => {
                    if let Some(ga) = ga {
                        kernels::gemm_nt(g, db, ga, rows, n, k);
                    }
                    if let Some(gb) = gb {
                        kernels::gemm_tn(da, g, gb, k, rows, n);
                    }
                }
                MatBatch::SharedLhs(nb) => {
                    let mut ga = ga;
                    let mut gb = gb;
                    for t in 0..nb {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        if let Some(ga) = ga.as_deref_mut() {
                            kernels::gemm_nt(gt, &db[t * k * n..(t + 1) * k * n], ga, m, n, k);
                        }
                        if let Some(gb) = gb.as_deref_mut() {
                            kernels::gemm_tn(da, gt, &mut gb[t * k * n..(t + 1) * k * n], k, m, n);
                        }
                    }
                }
                MatBatch::Paired(nb) => {
                    let mut ga = ga;
                    let mut gb = gb;
                    for t in 0..nb {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        if let Some(ga) = ga.as_deref_mut() {
                            kernels::gemm_nt(gt, &db[t * k * n..(t + 1) * k * n], &mut ga[t * m * k..(t + 1) * m * k], m, n, k);
                        }
                        if let Some(gb) = gb.as_deref_mut() {
                            kernels::gemm_tn(&da[t * m * k..(t + 1) * m * k], gt, &mut gb[t * k * n..(t + 1) * k * n], k, m, n);
                        }
                    }
                }
            }
            s.restore(grads);
        }
        Op::LayerNorm { x, gain, bias, xhat, rstd } => {
            let dim = *out_shape.last().expect("shape");
            let gv = nodes[gain.0].value.data();
            let inv_n = T::one() / T::of(dim as f64);
            acc(nodes, grads, *x, |gx| {
                for (r, &rs) in rstd.iter().enumerate() {
                    let row = r * dim..(r + 1) * dim;
                    let (gr, hr) = (&g[row.clone()], &xhat[row.clone()]);
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..dim {
                        let d = gr[j] * gv[j];
                        m1 += d;
                        m2 += d * hr[j];
                    }
                    m1 *= inv_n;
                    m2 *= inv_n;
                    for j in 0..dim {
                        gx[r * dim + j] += rs * (gr[j] * gv[j] - m1 - hr[j] * m2);
                    }
                }
            });
            acc(nodes, grads, *gain, |gg| {
                for (j, (&gj, &h)) in g.iter().zip(xhat).enumerate() {
                    gg[j % dim] += gj * h;
                }
            });
            acc(nodes, grads, *bias, |gb| {
                for (j, &gj) in g.iter().enumerate() {
                    gb[j % dim] += gj;
                }
            });
        }
        Op::RmsNorm { x, gain, xn, rrms } => {
            let dim = *out_shape.last().expect("shape");
            let gv = nodes[gain.0].value.data();
            let inv_n = T::one() / T::of(dim as f64);
            acc(nodes, grads, *x, |gx| {
                for (r, &rr) in rrms.iter().enumerate() {
                    let row = r * dim..(r + 1) * dim;
                    let (gr, hr) = (&g[row.clone()], &xn[row.clone()]);
                    let mut m = T::zero();
                    for j in 0..dim {
                        m += gr[j] * gv[j] * hr[j];
                    }
                    m *= inv_n;
                    for j in 0..dim {
                        gx[r * dim + j] += rr * (gr[j] * gv[j] - hr[j] * m);
                    }
                }
            });
            acc(nodes, grads, *gain, |gg| {
                for (j, (&gj, &h)) in g.iter().zip(xn).enumerate() {
                    gg[j % dim] += gj * h;
                }
            });
        }
        Op::Conv1d { x, w, bias, geom } => {
            let mut vars = vec![*x, *w];
            vars.extend(bias.iter().copied());
            let mut s = Scratch::take(nodes, grads, &vars);
            let mut it = s.bufs.iter_mut();
            let gx = it.next().and_then(|b| b.1.as_deref_mut());
            let gw = it.next().and_then(|b| b.1.as_deref_mut());
            let gb = it.next().and_then(|b| b.1.as_deref_mut());
            kernels::conv1d_backward(nodes[x.0].value.data(), nodes[w.0].value.data(), g, gx, gw, gb, *geom);
            s.restore(grads);
        }
        Op::Permute { x, perm } => {
            let mut inv = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            let (back, _) = permute_data(g, out_shape, &inv);
            acc(nodes, grads, *x, |gx| gx.iter_mut().zip(&back).for_each(|(a, &b)| *a += b));
        }
        Op::Concat { xs, axis } => {
            let inner: usize = out_shape[axis + 1..].iter().product();
            let outer: usize = out_shape[..*axis].iter().product();
            let mut offset = 0;
            for &v in xs {
                let len = nodes[v.0].value.shape()[*axis];
                let total = out_shape[*axis];
                acc(nodes, grads, v, |gv| {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        let dst = &mut gv[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                    }
                });
                offset += len;
            }
        }
        Op::Slice { x, axis, start } => {
            let full = nodes[x.0].value.shape();
            let inner: usize = full[axis + 1..].iter().product();
            let outer: usize = full[..*axis].iter().product();
            let len = out_shape[*axis];
            acc(nodes, grads, *x, |gx| {
                for o in 0..outer {
                    let base = (o * full[*axis] + start) * inner;
                    let dst = &mut gx[base..base + len * inner];
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                }
            });
        }
        Op::Expand { x } => {
            let layout = Layout::new(nodes[x.0].value.shape(), out_shape);
            acc(nodes, grads, *x, |gx| {
                for (j, &gj) in g.iter().enumerate() {
                    gx[layout.index(j)] += gj;
                }
            });
        }
        Op::Sum { x } => acc(nodes, grads, *x, |gx| gx.iter_mut().for_each(|a| *a += g[0])),
        Op::Mean { x } => {
            let n = T::of(nodes[x.0].value.numel() as f64);
            acc(nodes, grads, *x, |gx| gx.iter_mut().for_each(|a| *a += g[0] / n));
        }
        Op::MeanLast { x } => {
            let last = *nodes[x.0].value.shape().last().expect("shape");
            let inv = T::one() / T::of(last as f64);
            acc(nodes, grads, *x, |gx| {
                for (j, a) in gx.iter_mut().enumerate() {
                    *a += g[j / last] * inv;
                }
            });
        }
        Op::Softmax { x } => {
            let last = *out_shape.last().expect("shape");
            let y = node.value.data();
            acc(nodes, grads, *x, |gx| {
                for r in 0..y.len() / last {
                    let row = r * last..(r + 1) * last;
                    let dotp: T = g[row.clone()].iter().zip(&y[row.clone()]).map(|(&a, &b)| a * b).sum();
                    for j in row {
                        gx[j] += y[j] * (g[j] - dotp);
                    }
                }
            });
        }
        Op::Attention {
            q,
            k,
            v,
            visible,
            scale,
            dropout,
            probs,
            geom,
        } => {
            let mut s = Scratch::take(nodes, grads, &[*q, *k, *v]);
            let mut it = s.bufs.iter_mut();
            let gq = it.next().and_then(|b| b.1.as_deref_mut());
            let gk = it.next().and_then(|b| b.1.as_deref_mut());
            let gv = it.next().and_then(|b| b.1.as_deref_mut());
            kernels::attention_backward(
                nodes[q.0].value.data(),
                nodes[k.0].value.data(),
                nodes[v.0].value.data(),
                visible,
                *scale,
                dropout.as_deref(),
                probs,
                g,
                gq,
                gk,
                gv,
                *geom,
            );
            s.restore(grads);
        }
        Op::Scan {
            u,
            delta,
            a,
            b,
            c,
            d,
            states,
            geom,
        } => {
            let vars = [*u, *delta, *a, *b, *c, *d];
            let mut s = Scratch::take(nodes, grads, &vars);
            let mut it = s.bufs.iter_mut();
            let grads_in = ScanGrads {
                u: it.next().and_then(|b| b.1.as_deref_mut()),
                delta: it.next().and_then(|b| b.1.as_deref_mut()),
                a: it.next().and_then(|b| b.1.as_deref_mut()),
                b: it.next().and_then(|b| b.1.as_deref_mut()),
                c: it.next().and_then(|b| b.1.as_deref_mut()),
                d: it.next().and_then(|b| b.1.as_deref_mut()),
            };
            kernels::scan_backward(
                nodes[u.0].value.data(),
                nodes[delta.0].value.data(),
                nodes[a.0].value.data(),
                nodes[b.0].value.data(),
                nodes[c.0].value.data(),
                nodes[d.0].value.data(),
                states,
                g,
                grads_in,
                *geom,
            );
            s.restore(grads);
        }
        Op::Huber { pred, target, delta } => {
            let (p, t) = (nodes[pred.0].value.data(), nodes[target.0].value.data());
            let n = T::of(p.len() as f64);
            let d: Vec<T> = p
                .iter()
                .zip(t)
                .map(|(&a, &b)| crate::train::huber_grad(a - b, *delta) * g[0] / n)
                .collect();
            acc(nodes, grads, *pred, |gp| gp.iter_mut().zip(&d).for_each(|(a, &b)| *a += b));
            acc(nodes, grads, *target, |gt| gt.iter_mut().zip(&d).for_each(|(a, &b)| *a -= b));
        }
    }
}
