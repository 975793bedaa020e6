//! Gated linear attention.
//!
//! Per head of width `M`: `S_t = diag(a_t) S_{t-1} + k_t v_t^T` and
//! `y_t = S_t^T q_t`, with `q` scaled by `M^-1/2`. The gate is
//! `a_t = sigmoid(x_t W_down W_up + b)^(1/16)`, a rank-`gate_rank`
//! data-dependent decay over the key dimension.

use super::layer::{Cache, Mixer};
use super::linalg::{matmul, matmul_at_acc, matmul_bt, matmul_bt_acc, sigmoid};
use super::params::{carve, carve_mut, Init, ParamSpec};
use super::spec::LayerSpec;

pub const GATE_TEMPERATURE: f64 = 16.0;

/// One head of the gated recurrence over `(T, M)` inputs and `(T, M)` gates.
/// Returns the outputs and every state `S_1 .. S_T` as `(T, M, M)`.
pub fn gated_recurrence(q: &[f64], k: &[f64], v: &[f64], alpha: &[f64], t: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut states = vec![0.0; t * m * m];
    let mut y = vec![0.0; t * m];
    let mut s = vec![0.0; m * m];
    for step in 0..t {
        let (qt, kt, vt, at) = (&q[step * m..][..m], &k[step * m..][..m], &v[step * m..][..m], &alpha[step * m..][..m]);
        for i in 0..m {
            let row = &mut s[i * m..(i + 1) * m];
            for j in 0..m {
                row[j] = at[i] * row[j] + kt[i] * vt[j];
            }
        }
        let yt = &mut y[step * m..(step + 1) * m];
        for i in 0..m {
            for j in 0..m {
                yt[j] += qt[i] * s[i * m + j];
            }
        }
        states[step * m * m..(step + 1) * m * m].copy_from_slice(&s);
    }
    (y, states)
}

pub struct Gla {
    d: usize,
    heads: usize,
    m: usize,
    rank: usize,
}

struct GlaCache {
    b: usize,
    t: usize,
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    low: Vec<f64>,
    sig: Vec<f64>,
    alpha: Vec<f64>,
    /// `(B, H, T, M, M)`
    states: Vec<f64>,
    o: Vec<f64>,
}

impl Gla {
    pub fn new(spec: &LayerSpec) -> Self {
        Gla { d: spec.width, heads: spec.heads, m: spec.head_dim, rank: spec.gate_rank }
    }

    fn gather(&self, x: &[f64], bi: usize, h: usize, t: usize) -> Vec<f64> {
        let (d, m) = (self.d, self.m);
        (0..t).flat_map(|s| x[(bi * t + s) * d + h * m..][..m].iter().copied()).collect()
    }
}

impl Mixer for Gla {
    fn params(&self) -> Vec<ParamSpec> {
        let d = self.d;
        vec![
            ParamSpec::matrix("wq", d, d),
            ParamSpec::matrix("wk", d, d),
            ParamSpec::matrix("wv", d, d),
            ParamSpec::matrix("gate_down", d, self.rank),
            ParamSpec::matrix("gate_up", self.rank, d),
            ParamSpec::vector("gate_bias", d, Init::Const(0.0)),
            ParamSpec::matrix("wo", d, d),
        ]
    }

    fn forward(&self, p: &[f64], x: &[f64], b: usize, t: usize) -> (Vec<f64>, Cache) {
        let ps = carve(p, &self.params());
        let (d, hn, m) = (self.d, self.heads, self.m);
        let n = b * t;
        let scale = 1.0 / (m as f64).sqrt();
        let mut q = matmul(x, ps[0], n, d, d);
        q.iter_mut().for_each(|v| *v *= scale);
        let k = matmul(x, ps[1], n, d, d);
        let v = matmul(x, ps[2], n, d, d);
        let low = matmul(x, ps[3], n, d, self.rank);
        let mut z = matmul(&low, ps[4], n, self.rank, d);
        for row in z.chunks_mut(d) {
            for (zv, bv) in row.iter_mut().zip(ps[5]) {
                *zv += bv;
            }
        }
        let sig: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let alpha: Vec<f64> = sig.iter().map(|s| s.powf(1.0 / GATE_TEMPERATURE)).collect();
        let mut o = vec![0.0; n * d];
        let mut states = vec![0.0; b * hn * t * m * m];
        for bi in 0..b {
            for h in 0..hn {
                let g = |a: &[f64]| self.gather(a, bi, h, t);
                let (y, st) = gated_recurrence(&g(&q), &g(&k), &g(&v), &g(&alpha), t, m);
                for s in 0..t {
                    o[(bi * t + s) * d + h * m..][..m].copy_from_slice(&y[s * m..(s + 1) * m]);
                }
                states[(bi * hn + h) * t * m * m..][..t * m * m].copy_from_slice(&st);
            }
        }
        let y = matmul(&o, ps[6], n, d, d);
        let cache = GlaCache { b, t, x: x.to_vec(), q, k, v, low, sig, alpha, states, o };
        (y, Box::new(cache))
    }

    fn backward(&self, p: &[f64], cache: &Cache, dy: &[f64], dp: &mut [f64]) -> Vec<f64> {
        let c = cache.downcast_ref::<GlaCache>().expect("gla cache");
        let specs = self.params();
        let ps = carve(p, &specs);
        let mut gs = carve_mut(dp, &specs);
        let (d, hn, m, b, t) = (self.d, self.heads, self.m, c.b, c.t);
        let n = b * t;
        matmul_at_acc(&c.o, dy, n, d, d, gs[6]);
        let dout = matmul_bt(dy, ps[6], n, d, d);
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dalpha = vec![0.0; n * d];
        let mut ds = vec![0.0; m * m];
        for bi in 0..b {
            for h in 0..hn {
                ds.iter_mut().for_each(|v| *v = 0.0);
                let st = &c.states[(bi * hn + h) * t * m * m..][..t * m * m];
                for s in (0..t).rev() {
                    let r = (bi * t + s) * d + h * m;
                    let cur = &st[s * m * m..(s + 1) * m * m];
                    let dot = &dout[r..r + m];
                    for i in 0..m {
                        let qi = c.q[r + i];
                        let mut acc = 0.0;
                        for j in 0..m {
                            ds[i * m + j] += qi * dot[j];
                            acc += cur[i * m + j] * dot[j];
                        }
                        dq[r + i] = acc;
                    }
                    for i in 0..m {
                        let ki = c.k[r + i];
                        let mut dki = 0.0;
                        let mut dai = 0.0;
                        for j in 0..m {
                            let g = ds[i * m + j];
                            dki += g * c.v[r + j];
                            dv[r + j] += g * ki;
                            if s > 0 {
                                dai += g * st[(s - 1) * m * m + i * m + j];
                            }
                        }
                        dk[r + i] = dki;
                        dalpha[r + i] = dai;
                        let a = c.alpha[r + i];
                        ds[i * m..(i + 1) * m].iter_mut().for_each(|v| *v *= a);
                    }
                }
            }
        }
        let scale = 1.0 / (m as f64).sqrt();
        dq.iter_mut().for_each(|v| *v *= scale);
        let dz: Vec<f64> = (0..n * d)
            .map(|i| dalpha[i] * c.alpha[i] * (1.0 - c.sig[i]) / GATE_TEMPERATURE)
            .collect();
        for row in dz.chunks(d) {
            for (g, v) in gs[5].iter_mut().zip(row) {
                *g += v;
            }
        }
        matmul_at_acc(&c.low, &dz, n, self.rank, d, gs[4]);
        let dlow = matmul_bt(&dz, ps[4], n, self.rank, d);
        let mut dx = matmul_bt(&dlow, ps[3], n, d, self.rank);
        matmul_at_acc(&c.x, &dlow, n, d, self.rank, gs[3]);
        for (i, g) in [&dq, &dk, &dv].into_iter().enumerate() {
            matmul_at_acc(&c.x, g, n, d, d, gs[i]);
            matmul_bt_acc(g, ps[i], n, d, d, &mut dx);
        }
        dx
    }
}
