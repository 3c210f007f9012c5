//! Slice-level compute kernels. All buffers are row-major; every kernel
//! accumulates into its output (`out += ...`).

use super::Real;

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[m,n] += a[m,k] · b[k,n]`
pub fn gemm_nn<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av != T::zero() {
                axpy(av, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
}

/// `out[m,n] += a[m,k] · b[n,k]ᵀ`
pub fn gemm_nt<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            *o += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[m,n] += a[k,m]ᵀ · b[k,n]`
pub fn gemm_tn<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av != T::zero() {
                axpy(av, brow, &mut out[i * n..(i + 1) * n]);
            }
        }
    }
}

/// Geometry of a grouped 1-D cross-correlation.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub kernel: usize,
    pub pad_left: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn macs(&self) -> usize {
        self.batch * self.c_out * (self.c_in / self.groups) * self.kernel * self.len_out
    }

    /// Output positions `t` for which `t + k - pad_left` lands inside the input.
    #[inline]
    fn valid(&self, k: usize) -> (usize, usize) {
        let lo = self.pad_left.saturating_sub(k);
        let hi = (self.len_in + self.pad_left).saturating_sub(k).min(self.len_out);
        (lo, hi.max(lo))
    }
}

pub fn conv1d_forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T], g: ConvGeom) {
    let cin_g = g.c_in / g.groups;
    let cout_g = g.c_out / g.groups;
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let grp = co / cout_g;
            let orow = &mut out[(b * g.c_out + co) * g.len_out..(b * g.c_out + co + 1) * g.len_out];
            if let Some(bias) = bias {
                orow.iter_mut().for_each(|o| *o += bias[co]);
            }
            for cig in 0..cin_g {
                let ci = grp * cin_g + cig;
                let xrow = &x[(b * g.c_in + ci) * g.len_in..(b * g.c_in + ci + 1) * g.len_in];
                for k in 0..g.kernel {
                    let wv = w[(co * cin_g + cig) * g.kernel + k];
                    let (lo, hi) = g.valid(k);
                    let shift = k as isize - g.pad_left as isize;
                    for t in lo..hi {
                        orow[t] += wv * xrow[(t as isize + shift) as usize];
                    }
                }
            }
        }
    }
}

/// Accumulates input, weight and bias gradients of [`conv1d_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
    g: ConvGeom,
) {
    let cin_g = g.c_in / g.groups;
    let cout_g = g.c_out / g.groups;
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let grp = co / cout_g;
            let grow = &gout[(b * g.c_out + co) * g.len_out..(b * g.c_out + co + 1) * g.len_out];
            for cig in 0..cin_g {
                let ci = grp * cin_g + cig;
                let xoff = (b * g.c_in + ci) * g.len_in;
                for k in 0..g.kernel {
                    let widx = (co * cin_g + cig) * g.kernel + k;
                    let (lo, hi) = g.valid(k);
                    let shift = k as isize - g.pad_left as isize;
                    if let Some(gx) = gx.as_deref_mut() {
                        let wv = w[widx];
                        for t in lo..hi {
                            gx[xoff + (t as isize + shift) as usize] += wv * grow[t];
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        let mut s = T::zero();
                        for t in lo..hi {
                            s += x[xoff + (t as isize + shift) as usize] * grow[t];
                        }
                        gw[widx] += s;
                    }
                }
            }
        }
    }
    if let Some(gb) = gb {
        for b in 0..g.batch {
            for co in 0..g.c_out {
                let grow = &gout[(b * g.c_out + co) * g.len_out..(b * g.c_out + co + 1) * g.len_out];
                gb[co] += grow.iter().copied().sum::<T>();
            }
        }
    }
}

/// Geometry of a masked attention call: `heads` independent (query, key) problems.
#[derive(Debug, Clone, Copy)]
pub struct AttnGeom {
    pub heads: usize,
    pub tq: usize,
    pub tk: usize,
    pub hd: usize,
}

/// Softmax attention restricted to the visible keys of each query row.
///
/// `visible[i]` lists the key indices query `i` may attend to. `probs` receives the
/// pre-dropout attention probabilities (dense `[heads, tq, tk]`, zero where masked).
#[allow(clippy::too_many_arguments)]
pub fn attention_forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    visible: &[Vec<usize>],
    scale: T,
    dropout: Option<&[T]>,
    out: &mut [T],
    probs: &mut [T],
    g: AttnGeom,
) {
    let mut scores = vec![T::zero(); g.tk];
    for h in 0..g.heads {
        for (i, keys) in visible.iter().enumerate() {
            let qrow = &q[(h * g.tq + i) * g.hd..(h * g.tq + i + 1) * g.hd];
            let mut max = T::neg_infinity();
            for (slot, &j) in keys.iter().enumerate() {
                let s = scale * dot(qrow, &k[(h * g.tk + j) * g.hd..(h * g.tk + j + 1) * g.hd]);
                scores[slot] = s;
                max = max.max(s);
            }
            let mut z = T::zero();
            for s in scores.iter_mut().take(keys.len()) {
                *s = (*s - max).exp();
                z += *s;
            }
            let prow = &mut probs[(h * g.tq + i) * g.tk..(h * g.tq + i + 1) * g.tk];
            let orow = &mut out[(h * g.tq + i) * g.hd..(h * g.tq + i + 1) * g.hd];
            for (slot, &j) in keys.iter().enumerate() {
                let p = scores[slot] / z;
                prow[j] = p;
                let pd = match dropout {
                    Some(d) => p * d[(h * g.tq + i) * g.tk + j],
                    None => p,
                };
                if pd != T::zero() {
                    axpy(pd, &v[(h * g.tk + j) * g.hd..(h * g.tk + j + 1) * g.hd], orow);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    visible: &[Vec<usize>],
    scale: T,
    dropout: Option<&[T]>,
    probs: &[T],
    gout: &[T],
    mut gq: Option<&mut [T]>,
    mut gk: Option<&mut [T]>,
    mut gv: Option<&mut [T]>,
    g: AttnGeom,
) {
    let mut dp = vec![T::zero(); g.tk];
    for h in 0..g.heads {
        for (i, keys) in visible.iter().enumerate() {
            let grow = &gout[(h * g.tq + i) * g.hd..(h * g.tq + i + 1) * g.hd];
            let prow = &probs[(h * g.tq + i) * g.tk..(h * g.tq + i + 1) * g.tk];
            let mut inner = T::zero();
            for (slot, &j) in keys.iter().enumerate() {
                let drop = dropout.map_or(T::one(), |d| d[(h * g.tq + i) * g.tk + j]);
                let vrow = &v[(h * g.tk + j) * g.hd..(h * g.tk + j + 1) * g.hd];
                if let Some(gv) = gv.as_deref_mut() {
                    axpy(prow[j] * drop, grow, &mut gv[(h * g.tk + j) * g.hd..(h * g.tk + j + 1) * g.hd]);
                }
                let d = dot(grow, vrow) * drop;
                dp[slot] = d;
                inner += prow[j] * d;
            }
            let qrow = &q[(h * g.tq + i) * g.hd..(h * g.tq + i + 1) * g.hd];
            for (slot, &j) in keys.iter().enumerate() {
                let ds = prow[j] * (dp[slot] - inner) * scale;
                if ds == T::zero() {
                    continue;
                }
                let krow = &k[(h * g.tk + j) * g.hd..(h * g.tk + j + 1) * g.hd];
                if let Some(gq) = gq.as_deref_mut() {
                    axpy(ds, krow, &mut gq[(h * g.tq + i) * g.hd..(h * g.tq + i + 1) * g.hd]);
                }
                if let Some(gk) = gk.as_deref_mut() {
                    axpy(ds, qrow, &mut gk[(h * g.tk + j) * g.hd..(h * g.tk + j + 1) * g.hd]);
                }
            }
        }
    }
}

/// Geometry of a selective scan: `batch` sequences of `steps` positions, `channels`
/// independent diagonal SSMs each with `state` dimensions.
#[derive(Debug, Clone, Copy)]
pub struct ScanGeom {
    pub batch: usize,
    pub steps: usize,
    pub channels: usize,
    pub state: usize,
}

impl ScanGeom {
    /// State update (two products), readout (one), skip term (one per channel).
    pub fn macs(&self) -> usize {
        self.batch * self.steps * self.channels * (3 * self.state + 1)
    }
}

/// Selective scan with zero-order-hold transition and Euler input path:
/// `h_t = exp(Δ_t A) ⊙ h_{t-1} + Δ_t B_t x_t`, `y_t = C_t · h_t + D x_t`.
///
/// Writes every hidden state into `states` (`[batch, steps, channels, state]`) for the
/// backward pass.
#[allow(clippy::too_many_arguments)]
pub fn scan_forward<T: Real>(
    u: &[T],
    delta: &[T],
    a: &[T],
    bm: &[T],
    c: &[T],
    d: &[T],
    y: &mut [T],
    states: &mut [T],
    g: ScanGeom,
) {
    let (dn, n) = (g.channels, g.state);
    for b in 0..g.batch {
        for t in 0..g.steps {
            let bt = b * g.steps + t;
            let brow = &bm[bt * n..(bt + 1) * n];
            let crow = &c[bt * n..(bt + 1) * n];
            for ch in 0..dn {
                let x = u[bt * dn + ch];
                let dl = delta[bt * dn + ch];
                let cur = (bt * dn + ch) * n;
                let mut acc = T::zero();
                for s in 0..n {
                    let prev = if t == 0 { T::zero() } else { states[cur - dn * n + s] };
                    let h = (dl * a[ch * n + s]).exp() * prev + dl * brow[s] * x;
                    states[cur + s] = h;
                    acc += crow[s] * h;
                }
                y[bt * dn + ch] += acc + d[ch] * x;
            }
        }
    }
}

/// Gradient buffers for [`scan_backward`]; `None` skips that input.
pub struct ScanGrads<'a, T> {
    pub u: Option<&'a mut [T]>,
    pub delta: Option<&'a mut [T]>,
    pub a: Option<&'a mut [T]>,
    pub b: Option<&'a mut [T]>,
    pub c: Option<&'a mut [T]>,
    pub d: Option<&'a mut [T]>,
}

#[allow(clippy::too_many_arguments)]
pub fn scan_backward<T: Real>(
    u: &[T],
    delta: &[T],
    a: &[T],
    bm: &[T],
    c: &[T],
    d: &[T],
    states: &[T],
    gy: &[T],
    grads: ScanGrads<'_, T>,
    g: ScanGeom,
) {
    let ScanGrads {
        u: mut gu,
        delta: mut gdelta,
        a: mut ga,
        b: mut gb,
        c: mut gc,
        d: mut gd,
    } = grads;
    let (dn, n) = (g.channels, g.state);
    let mut gh = vec![T::zero(); dn * n];
    for b in 0..g.batch {
        gh.iter_mut().for_each(|v| *v = T::zero());
        for t in (0..g.steps).rev() {
            let bt = b * g.steps + t;
            for ch in 0..dn {
                let gyv = gy[bt * dn + ch];
                let x = u[bt * dn + ch];
                let dl = delta[bt * dn + ch];
                let cur = (bt * dn + ch) * n;
                if let Some(gd) = gd.as_deref_mut() {
                    gd[ch] += gyv * x;
                }
                let mut gdl = T::zero();
                let mut gx = gyv * d[ch];
                for s in 0..n {
                    let h = states[cur + s];
                    let prev = if t == 0 { T::zero() } else { states[cur - dn * n + s] };
                    let ghs = &mut gh[ch * n + s];
                    *ghs += gyv * c[bt * n + s];
                    if let Some(gc) = gc.as_deref_mut() {
                        gc[bt * n + s] += gyv * h;
                    }
                    let av = a[ch * n + s];
                    let abar = (dl * av).exp();
                    let g_abar = *ghs * prev;
                    let bv = bm[bt * n + s];
                    gdl += g_abar * abar * av + *ghs * bv * x;
                    if let Some(ga) = ga.as_deref_mut() {
                        ga[ch * n + s] += g_abar * abar * dl;
                    }
                    if let Some(gb) = gb.as_deref_mut() {
                        gb[bt * n + s] += *ghs * dl * x;
                    }
                    gx += *ghs * dl * bv;
                    *ghs *= abar;
                }
                if let Some(gu) = gu.as_deref_mut() {
                    gu[bt * dn + ch] += gx;
                }
                if let Some(gdelta) = gdelta.as_deref_mut() {
                    gdelta[bt * dn + ch] += gdl;
                }
            }
        }
    }
}
