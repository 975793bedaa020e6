//! Multi-head causal softmax attention with rotary positions and no biases.

use super::layer::{Cache, Mixer};
use super::linalg::{gemm_strided, matmul, matmul_at_acc, matmul_bt, matmul_bt_acc, softmax_row, View};
use super::params::{carve, carve_mut, ParamSpec};
use super::spec::LayerSpec;

const ROPE_BASE: f64 = 10_000.0;

/// Rotary tables: `cos/sin[t * half + i]` for angle `t * base^(-2i/M)`.
pub(crate) struct Rope {
    half: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Rope {
    pub(crate) fn new(t: usize, m: usize) -> Self {
        let half = m / 2;
        let mut cos = vec![0.0; t * half];
        let mut sin = vec![0.0; t * half];
        for s in 0..t {
            for i in 0..half {
                let theta = ROPE_BASE.powf(-2.0 * i as f64 / m as f64);
                let a = s as f64 * theta;
                cos[s * half + i] = a.cos();
                sin[s * half + i] = a.sin();
            }
        }
        Rope { half, cos, sin }
    }

    /// Rotates every head of a `(B * T, H * M)` buffer; `sign = -1` undoes it.
    pub(crate) fn apply(&self, x: &mut [f64], t: usize, heads: usize, m: usize, sign: f64) {
        let d = heads * m;
        for (row, chunk) in x.chunks_mut(d).enumerate() {
            let s = row % t;
            for h in 0..heads {
                let head = &mut chunk[h * m..(h + 1) * m];
                for i in 0..self.half {
                    let (c, sn) = (self.cos[s * self.half + i], sign * self.sin[s * self.half + i]);
                    let (a, b) = (head[i], head[i + self.half]);
                    head[i] = a * c - b * sn;
                    head[i + self.half] = a * sn + b * c;
                }
            }
        }
    }
}

pub struct Attention {
    d: usize,
    heads: usize,
    m: usize,
    rotary: bool,
}

struct AttnCache {
    b: usize,
    t: usize,
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights, `(B, H, T, T)`.
    p: Vec<f64>,
    o: Vec<f64>,
}

impl Attention {
    pub fn new(spec: &LayerSpec) -> Self {
        Attention { d: spec.width, heads: spec.heads, m: spec.head_dim, rotary: true }
    }

    pub fn without_rotary(mut self) -> Self {
        self.rotary = false;
        self
    }
}

impl Mixer for Attention {
    fn params(&self) -> Vec<ParamSpec> {
        let d = self.d;
        vec![
            ParamSpec::matrix("wq", d, d),
            ParamSpec::matrix("wk", d, d),
            ParamSpec::matrix("wv", d, d),
            ParamSpec::matrix("wo", d, d),
        ]
    }

    fn forward(&self, p: &[f64], x: &[f64], b: usize, t: usize) -> (Vec<f64>, Cache) {
        let ps = carve(p, &self.params());
        let (d, hn, m) = (self.d, self.heads, self.m);
        let n = b * t;
        let mut q = matmul(x, ps[0], n, d, d);
        let mut k = matmul(x, ps[1], n, d, d);
        let v = matmul(x, ps[2], n, d, d);
        if self.rotary {
            let rope = Rope::new(t, m);
            rope.apply(&mut q, t, hn, m, 1.0);
            rope.apply(&mut k, t, hn, m, 1.0);
        }
        let scale = 1.0 / (m as f64).sqrt();
        let mut probs = vec![0.0; b * hn * t * t];
        let mut o = vec![0.0; n * d];
        for bi in 0..b {
            for h in 0..hn {
                let off = bi * t * d + h * m;
                let pm = &mut probs[(bi * hn + h) * t * t..][..t * t];
                let qv = View::rows(&q[off..], d);
                let kv = View::rows(&k[off..], d).t();
                gemm_strided(t, m, t, qv, kv, 0.0, pm, t, 1);
                for i in 0..t {
                    let row = &mut pm[i * t..(i + 1) * t];
                    row[..=i].iter_mut().for_each(|s| *s *= scale);
                    softmax_row(&mut row[..=i]);
                    row[i + 1..].iter_mut().for_each(|s| *s = 0.0);
                }
                let vv = View::rows(&v[off..], d);
                gemm_strided(t, t, m, View::rows(pm, t), vv, 0.0, &mut o[off..], d, 1);
            }
        }
        let y = matmul(&o, ps[3], n, d, d);
        let cache = AttnCache { b, t, x: x.to_vec(), q, k, v, p: probs, o };
        (y, Box::new(cache))
    }

    fn backward(&self, p: &[f64], cache: &Cache, dy: &[f64], dp: &mut [f64]) -> Vec<f64> {
        let c = cache.downcast_ref::<AttnCache>().expect("attention cache");
        let specs = self.params();
        let ps = carve(p, &specs);
        let mut gs = carve_mut(dp, &specs);
        let (d, hn, m, b, t) = (self.d, self.heads, self.m, c.b, c.t);
        let n = b * t;
        let scale = 1.0 / (m as f64).sqrt();
        matmul_at_acc(&c.o, dy, n, d, d, gs[3]);
        let dout = matmul_bt(dy, ps[3], n, d, d);
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dpm = vec![0.0; t * t];
        for bi in 0..b {
            for h in 0..hn {
                let off = bi * t * d + h * m;
                let pm = &c.p[(bi * hn + h) * t * t..][..t * t];
                let dov = View::rows(&dout[off..], d);
                // dP = dO V^T
                gemm_strided(t, m, t, dov, View::rows(&c.v[off..], d).t(), 0.0, &mut dpm, t, 1);
                // dV = P^T dO
                gemm_strided(t, t, m, View::rows(pm, t).t(), dov, 0.0, &mut dv[off..], d, 1);
                for i in 0..t {
                    let pr = &pm[i * t..=i * t + i];
                    let dr = &mut dpm[i * t..(i + 1) * t];
                    let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                    for j in 0..=i {
                        dr[j] = pr[j] * (dr[j] - dot) * scale;
                    }
                    dr[i + 1..].iter_mut().for_each(|s| *s = 0.0);
                }
                let ds = View::rows(&dpm, t);
                gemm_strided(t, t, m, ds, View::rows(&c.k[off..], d), 0.0, &mut dq[off..], d, 1);
                gemm_strided(t, t, m, ds.t(), View::rows(&c.q[off..], d), 0.0, &mut dk[off..], d, 1);
            }
        }
        if self.rotary {
            let rope = Rope::new(t, m);
            rope.apply(&mut dq, t, hn, m, -1.0);
            rope.apply(&mut dk, t, hn, m, -1.0);
        }
        let mut dx = vec![0.0; n * d];
        for (i, g) in [&dq, &dk, &dv].into_iter().enumerate() {
            matmul_at_acc(&c.x, g, n, d, d, gs[i]);
            matmul_bt_acc(g, ps[i], n, d, d, &mut dx);
        }
        dx
    }
}

/// Attention weights `(H, T, T)` for one sequence, for inspection.
pub fn attention_weights(layer: &Attention, p: &[f64], x: &[f64], t: usize) -> Vec<f64> {
    let (_, cache) = layer.forward(p, x, 1, t);
    cache.downcast_ref::<AttnCache>().expect("attention cache").p.clone()
}
