//! Hyena-family mixers: gated long convolutions with implicitly parametrized
//! filters.
//!
//! All three layers share the same skeleton. An input projection produces
//! three streams `(x0, x1, v)`, each passed through a short depthwise causal
//! convolution. The long convolution acts on `x1 * v` (Hyena, Hyena experts)
//! or on the per-head outer products `x1 v^T` (multi-head Hyena), adds a
//! per-filter skip term, and the result is gated by `x0` before the output
//! projection.
//!
//! Long filters are produced by a small network on positional features
//! `[t/(T-1), cos(2 pi f t / T), -sin(2 pi f t / T)]` for `f` in
//! `{1e-4, 1, .., BANDS - 1}`: two `sin`-activated layers of width
//! `filter_order`, a linear read-out to one value per filter, and a fixed
//! exponential window `exp(-|delta_c| t/(T-1))` whose rates are spread
//! linearly between `ln(1e-2)/1.5` and `ln(1e-2)/0.3` across filters.

use super::conv::{ConvPath, LongConv};
use super::layer::{Cache, Mixer};
use super::linalg::{matmul, matmul_at_acc, matmul_bt, matmul_bt_acc};
use super::mlp::Routing;
use super::params::{carve, carve_mut, Init, ParamSpec};
use super::spec::LayerSpec;

pub const BANDS: usize = 2;
pub const FEATURES: usize = 1 + 2 * BANDS;
const DECAY_TARGET: f64 = 1e-2;
const SLOW_DECAY: f64 = 1.5;
const FAST_DECAY: f64 = 0.3;

/// Positional features `(T, FEATURES)`.
pub fn filter_features(t: usize) -> Vec<f64> {
    let mut z = vec![0.0; t * FEATURES];
    for s in 0..t {
        let row = &mut z[s * FEATURES..(s + 1) * FEATURES];
        row[0] = if t > 1 { s as f64 / (t - 1) as f64 } else { 0.0 };
        let w = 2.0 * std::f64::consts::PI * s as f64 / t as f64;
        for k in 0..BANDS {
            let f = if k == 0 { 1e-4 } else { k as f64 };
            row[1 + k] = (f * w).cos();
            row[1 + BANDS + k] = -(f * w).sin();
        }
    }
    z
}

/// Decay window `(T, F)` for `F` filters.
pub fn decay_window(t: usize, f: usize) -> Vec<f64> {
    let lo = DECAY_TARGET.ln() / SLOW_DECAY;
    let hi = DECAY_TARGET.ln() / FAST_DECAY;
    let mut w = vec![0.0; t * f];
    for c in 0..f {
        let delta = if f > 1 { lo + (hi - lo) * c as f64 / (f - 1) as f64 } else { lo };
        for s in 0..t {
            let tn = if t > 1 { s as f64 / (t - 1) as f64 } else { 0.0 };
            w[s * f + c] = (-tn * delta.abs()).exp();
        }
    }
    w
}

/// The implicit filter network producing `f` filters from width-`s` features.
#[derive(Debug, Clone, Copy)]
pub struct FilterNet {
    pub order: usize,
    pub filters: usize,
}

pub struct FilterActs {
    t: usize,
    z: Vec<f64>,
    p1: Vec<f64>,
    h1: Vec<f64>,
    p2: Vec<f64>,
    h2: Vec<f64>,
    window: Vec<f64>,
}

impl FilterNet {
    pub fn params(&self, prefix: &str) -> Vec<ParamSpec> {
        let s = self.order;
        let u = |fan: usize| Init::Uniform(-1.0 / (fan as f64).sqrt(), 1.0 / (fan as f64).sqrt());
        vec![
            ParamSpec::matrix(&format!("{prefix}w1"), FEATURES, s).with_init(u(FEATURES)).no_decay(),
            ParamSpec::vector(&format!("{prefix}b1"), s, u(FEATURES)),
            ParamSpec::matrix(&format!("{prefix}w2"), s, s).with_init(u(s)).no_decay(),
            ParamSpec::vector(&format!("{prefix}b2"), s, u(s)),
            ParamSpec::matrix(&format!("{prefix}w3"), s, self.filters).with_init(u(s)).no_decay(),
        ]
    }

    /// Filters `(T, filters)`.
    pub fn forward(&self, p: &[&[f64]], t: usize) -> (Vec<f64>, FilterActs) {
        let s = self.order;
        let z = filter_features(t);
        let mut p1 = matmul(&z, p[0], t, FEATURES, s);
        add_bias(&mut p1, p[1]);
        let h1: Vec<f64> = p1.iter().map(|v| v.sin()).collect();
        let mut p2 = matmul(&h1, p[2], t, s, s);
        add_bias(&mut p2, p[3]);
        let h2: Vec<f64> = p2.iter().map(|v| v.sin()).collect();
        let raw = matmul(&h2, p[4], t, s, self.filters);
        let window = decay_window(t, self.filters);
        let h = raw.iter().zip(&window).map(|(a, b)| a * b).collect();
        (h, FilterActs { t, z, p1, h1, p2, h2, window })
    }

    pub fn backward(&self, p: &[&[f64]], acts: &FilterActs, dh: &[f64], g: &mut [&mut [f64]]) {
        let (s, t, f) = (self.order, acts.t, self.filters);
        let draw: Vec<f64> = dh.iter().zip(&acts.window).map(|(a, b)| a * b).collect();
        matmul_at_acc(&acts.h2, &draw, t, s, f, g[4]);
        let dh2 = matmul_bt(&draw, p[4], t, s, f);
        let dp2: Vec<f64> = dh2.iter().zip(&acts.p2).map(|(d, x)| d * x.cos()).collect();
        col_sums(&dp2, s, g[3]);
        matmul_at_acc(&acts.h1, &dp2, t, s, s, g[2]);
        let dh1 = matmul_bt(&dp2, p[2], t, s, s);
        let dp1: Vec<f64> = dh1.iter().zip(&acts.p1).map(|(d, x)| d * x.cos()).collect();
        col_sums(&dp1, s, g[1]);
        matmul_at_acc(&acts.z, &dp1, t, FEATURES, s, g[0]);
    }
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    for row in x.chunks_mut(b.len()) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

fn col_sums(x: &[f64], cols: usize, out: &mut [f64]) {
    for row in x.chunks(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Depthwise causal convolution with `len` taps per channel, weights `(C, len)`.
pub fn short_conv(w: &[f64], x: &[f64], b: usize, t: usize, c: usize, len: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for bi in 0..b {
        for s in 0..t {
            let out = &mut y[(bi * t + s) * c..(bi * t + s + 1) * c];
            for j in 0..len.min(s + 1) {
                let inp = &x[(bi * t + s - j) * c..(bi * t + s - j + 1) * c];
                for ch in 0..c {
                    out[ch] += w[ch * len + j] * inp[ch];
                }
            }
        }
    }
    y
}

/// Returns `dx` and accumulates `dw`.
#[allow(clippy::too_many_arguments)]
pub fn short_conv_backward(w: &[f64], x: &[f64], dy: &[f64], b: usize, t: usize, c: usize, len: usize, dw: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    for bi in 0..b {
        for s in 0..t {
            let g = &dy[(bi * t + s) * c..(bi * t + s + 1) * c];
            for j in 0..len.min(s + 1) {
                let r = (bi * t + s - j) * c;
                for ch in 0..c {
                    dw[ch * len + j] += g[ch] * x[r + ch];
                    dx[r + ch] += g[ch] * w[ch * len + j];
                }
            }
        }
    }
    dx
}

fn short_conv_spec(c: usize, len: usize) -> ParamSpec {
    let r = 1.0 / (len as f64).sqrt();
    ParamSpec::matrix("short_conv", c, len).with_init(Init::Uniform(-r, r)).no_decay()
}

/// Gated long convolution shared by Hyena and Hyena experts:
/// `y = x0 * (h * (x1 v) + skip (x1 v))` over `C` channels with one filter per channel.
#[allow(clippy::too_many_arguments)]
pub fn gated_long_conv(x0: &[f64], x1: &[f64], v: &[f64], h: &[f64], skip: &[f64], b: usize, t: usize, c: usize) -> Vec<f64> {
    let a: Vec<f64> = x1.iter().zip(v).map(|(p, q)| p * q).collect();
    let conv = LongConv { b, t, c, f: c, path: ConvPath::Auto };
    let mut y = conv.forward(h, &a);
    for (i, yv) in y.iter_mut().enumerate() {
        *yv = x0[i] * (*yv + skip[i % c] * a[i]);
    }
    y
}

/// Splits the `(n, 3C)` projection into its three streams.
fn split3(z: &[f64], n: usize, c: usize) -> [Vec<f64>; 3] {
    let mut out = [vec![0.0; n * c], vec![0.0; n * c], vec![0.0; n * c]];
    for r in 0..n {
        for (k, o) in out.iter_mut().enumerate() {
            o[r * c..(r + 1) * c].copy_from_slice(&z[r * 3 * c + k * c..r * 3 * c + (k + 1) * c]);
        }
    }
    out
}

fn join3(parts: [&[f64]; 3], n: usize, c: usize) -> Vec<f64> {
    let mut z = vec![0.0; n * 3 * c];
    for r in 0..n {
        for (k, p) in parts.iter().enumerate() {
            z[r * 3 * c + k * c..r * 3 * c + (k + 1) * c].copy_from_slice(&p[r * c..(r + 1) * c]);
        }
    }
    z
}

/// Shared front end: projection, short convolutions and the channel-wise core.
struct Core {
    d: usize,
    c: usize,
    short: usize,
    filter: FilterNet,
}

struct CoreActs {
    b: usize,
    t: usize,
    x: Vec<f64>,
    z: Vec<f64>,
    x0: Vec<f64>,
    x1: Vec<f64>,
    v: Vec<f64>,
    a: Vec<f64>,
    conv: Vec<f64>,
    h: Vec<f64>,
    filt: FilterActs,
}

impl Core {
    /// Slots: in_proj, short_conv, filter (5), skip.
    fn params(&self) -> Vec<ParamSpec> {
        let mut v = vec![ParamSpec::matrix("in_proj", self.d, 3 * self.c), short_conv_spec(3 * self.c, self.short)];
        v.extend(self.filter.params("filter."));
        v.push(ParamSpec::vector("skip", self.filter.filters, Init::Normal(1.0)));
        v
    }

    const SLOTS: usize = 8;

    /// Returns the pre-gate convolution output and gated streams `(x0 * c)`.
    fn forward(&self, ps: &[&[f64]], x: &[f64], b: usize, t: usize) -> (Vec<f64>, CoreActs) {
        let (n, c) = (b * t, self.c);
        let zp = matmul(x, ps[0], n, self.d, 3 * c);
        let z = short_conv(ps[1], &zp, b, t, 3 * c, self.short);
        let [x0, x1, v] = split3(&z, n, c);
        let a: Vec<f64> = x1.iter().zip(&v).map(|(p, q)| p * q).collect();
        let (h, filt) = self.filter.forward(&ps[2..7], t);
        let lc = LongConv { b, t, c, f: c, path: ConvPath::Auto };
        let mut conv = lc.forward(&h, &a);
        let skip = ps[7];
        for (i, cv) in conv.iter_mut().enumerate() {
            *cv += skip[i % c] * a[i];
        }
        let y: Vec<f64> = x0.iter().zip(&conv).map(|(p, q)| p * q).collect();
        (y, CoreActs { b, t, x: x.to_vec(), z: zp, x0, x1, v, a, conv, h, filt })
    }

    fn backward(&self, ps: &[&[f64]], acts: &CoreActs, dy: &[f64], gs: &mut [&mut [f64]]) -> Vec<f64> {
        let (b, t, c) = (acts.b, acts.t, self.c);
        let n = b * t;
        let dx0: Vec<f64> = dy.iter().zip(&acts.conv).map(|(p, q)| p * q).collect();
        let dconv: Vec<f64> = dy.iter().zip(&acts.x0).map(|(p, q)| p * q).collect();
        let lc = LongConv { b, t, c, f: c, path: ConvPath::Auto };
        let (mut da, dh) = lc.backward(&acts.h, &acts.a, &dconv);
        let skip = ps[7];
        for i in 0..n * c {
            da[i] += skip[i % c] * dconv[i];
            gs[7][i % c] += dconv[i] * acts.a[i];
        }
        self.filter.backward(&ps[2..7], &acts.filt, &dh, &mut gs[2..7]);
        let dx1: Vec<f64> = da.iter().zip(&acts.v).map(|(p, q)| p * q).collect();
        let dv: Vec<f64> = da.iter().zip(&acts.x1).map(|(p, q)| p * q).collect();
        let dz = join3([&dx0, &dx1, &dv], n, c);
        let dzp = short_conv_backward(ps[1], &acts.z, &dz, b, t, 3 * c, self.short, gs[1]);
        matmul_at_acc(&acts.x, &dzp, n, self.d, 3 * c, gs[0]);
        matmul_bt(&dzp, ps[0], n, self.d, 3 * c)
    }
}

pub struct Hyena {
    core: Core,
}

struct HyenaCache {
    core: CoreActs,
    g: Vec<f64>,
}

impl Hyena {
    pub fn new(spec: &LayerSpec) -> Self {
        let d = spec.width;
        Hyena {
            core: Core {
                d,
                c: d,
                short: spec.short_filter_len,
                filter: FilterNet { order: spec.filter_order, filters: d },
            },
        }
    }
}

impl Mixer for Hyena {
    fn params(&self) -> Vec<ParamSpec> {
        let mut v = self.core.params();
        v.push(ParamSpec::matrix("out_proj", self.core.c, self.core.d));
        v
    }

    fn forward(&self, p: &[f64], x: &[f64], b: usize, t: usize) -> (Vec<f64>, Cache) {
        let ps = carve(p, &self.params());
        let (g, core) = self.core.forward(&ps, x, b, t);
        let y = matmul(&g, ps[Core::SLOTS], b * t, self.core.c, self.core.d);
        (y, Box::new(HyenaCache { core, g }))
    }

    fn backward(&self, p: &[f64], cache: &Cache, dy: &[f64], dp: &mut [f64]) -> Vec<f64> {
        let c = cache.downcast_ref::<HyenaCache>().expect("hyena cache");
        let specs = self.params();
        let ps = carve(p, &specs);
        let mut gs = carve_mut(dp, &specs);
        let n = c.core.b * c.core.t;
        let (cc, d) = (self.core.c, self.core.d);
        matmul_at_acc(&c.g, dy, n, cc, d, gs[Core::SLOTS]);
        let dg = matmul_bt(dy, ps[Core::SLOTS], n, cc, d);
        self.core.backward(&ps, &c.core, &dg, &mut gs)
    }
}

/// Hyena experts: `A` small Hyena mixers of width `W` over a shared input
/// projection; a router picks `G` of them per token and their outputs are
/// combined with renormalized softmax weights before a shared `W -> D`
/// output projection.
pub struct HyenaExperts {
    core: Core,
    experts: usize,
    active: usize,
    w: usize,
}

struct ExpertsCache {
    core: CoreActs,
    g: Vec<f64>,
    routing: Routing,
    mixed: Vec<f64>,
}

impl HyenaExperts {
    pub fn new(spec: &LayerSpec) -> Self {
        let c = spec.experts * spec.expert_width;
        HyenaExperts {
            core: Core {
                d: spec.width,
                c,
                short: spec.short_filter_len,
                filter: FilterNet { order: spec.filter_order, filters: c },
            },
            experts: spec.experts,
            active: spec.active_experts,
            w: spec.expert_width,
        }
    }

    /// Routing decisions for a `(B * T, D)` input.
    pub fn routing(&self, p: &[f64], x: &[f64], n: usize) -> Routing {
        let ps = carve(p, &self.params());
        let logits = matmul(x, ps[Core::SLOTS], n, self.core.d, self.experts);
        Routing::compute(&logits, n, self.experts, self.active)
    }
}

impl Mixer for HyenaExperts {
    fn params(&self) -> Vec<ParamSpec> {
        let mut v = self.core.params();
        v.push(ParamSpec::matrix("router", self.core.d, self.experts));
        v.push(ParamSpec::matrix("out_proj", self.w, self.core.d));
        v
    }

    fn forward(&self, p: &[f64], x: &[f64], b: usize, t: usize) -> (Vec<f64>, Cache) {
        let ps = carve(p, &self.params());
        let (n, d, w, cc) = (b * t, self.core.d, self.w, self.core.c);
        let (g, core) = self.core.forward(&ps, x, b, t);
        let logits = matmul(x, ps[Core::SLOTS], n, d, self.experts);
        let routing = Routing::compute(&logits, n, self.experts, self.active);
        let mut mixed = vec![0.0; n * w];
        for i in 0..n {
            for j in 0..self.active {
                let e = routing.experts[i * self.active + j];
                let s = routing.weights[i * self.active + j];
                let src = &g[i * cc + e * w..i * cc + (e + 1) * w];
                for (m, v) in mixed[i * w..(i + 1) * w].iter_mut().zip(src) {
                    *m += s * v;
                }
            }
        }
        let y = matmul(&mixed, ps[Core::SLOTS + 1], n, w, d);
        (y, Box::new(ExpertsCache { core, g, routing, mixed }))
    }

    fn backward(&self, p: &[f64], cache: &Cache, dy: &[f64], dp: &mut [f64]) -> Vec<f64> {
        let c = cache.downcast_ref::<ExpertsCache>().expect("hyena experts cache");
        let specs = self.params();
        let ps = carve(p, &specs);
        let mut gs = carve_mut(dp, &specs);
        let (n, d, w, cc) = (c.core.b * c.core.t, self.core.d, self.w, self.core.c);
        matmul_at_acc(&c.mixed, dy, n, w, d, gs[Core::SLOTS + 1]);
        let dmixed = matmul_bt(dy, ps[Core::SLOTS + 1], n, w, d);
        let mut dg = vec![0.0; n * cc];
        let mut dweights = vec![0.0; n * self.active];
        for i in 0..n {
            let dm = &dmixed[i * w..(i + 1) * w];
            for j in 0..self.active {
                let slot = i * self.active + j;
                let (e, s) = (c.routing.experts[slot], c.routing.weights[slot]);
                let base = i * cc + e * w;
                let mut dot = 0.0;
                for k in 0..w {
                    dg[base + k] += s * dm[k];
                    dot += dm[k] * c.g[base + k];
                }
                dweights[slot] = dot;
            }
        }
        let dlogits = c.routing.logit_grads(&dweights, self.experts);
        matmul_at_acc(&c.core.x, &dlogits, n, d, self.experts, gs[Core::SLOTS]);
        let mut dx = self.core.backward(&ps, &c.core, &dg, &mut gs);
        matmul_bt_acc(&dlogits, ps[Core::SLOTS], n, d, self.experts, &mut dx);
        dx
    }
}

/// Multi-head Hyena: per head of width `M`, the long convolution runs over
/// the `M x M` outer products `k_t v_t^T` with one filter per head, and the
/// head output is read out as `y_t = C_t^T q_t`.
pub struct MhHyena {
    d: usize,
    heads: usize,
    m: usize,
    short: usize,
    filter: FilterNet,
}

struct MhCache {
    b: usize,
    t: usize,
    x: Vec<f64>,
    zp: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Outer products and convolved states, `(B * T, H * M * M)`.
    outer: Vec<f64>,
    conv: Vec<f64>,
    h: Vec<f64>,
    filt: FilterActs,
    o: Vec<f64>,
}

impl MhHyena {
    pub fn new(spec: &LayerSpec) -> Self {
        MhHyena {
            d: spec.width,
            heads: spec.heads,
            m: spec.head_dim,
            short: spec.short_filter_len,
            filter: FilterNet { order: spec.filter_order, filters: spec.heads },
        }
    }
}

impl Mixer for MhHyena {
    fn params(&self) -> Vec<ParamSpec> {
        let d = self.d;
        let mut v = vec![ParamSpec::matrix("in_proj", d, 3 * d), short_conv_spec(3 * d, self.short)];
        v.extend(self.filter.params("filter."));
        v.push(ParamSpec::vector("skip", self.heads, Init::Normal(1.0)));
        v.push(ParamSpec::matrix("out_proj", d, d));
        v
    }

    fn forward(&self, p: &[f64], x: &[f64], b: usize, t: usize) -> (Vec<f64>, Cache) {
        let ps = carve(p, &self.params());
        let (d, hn, m) = (self.d, self.heads, self.m);
        let (n, mm) = (b * t, m * m);
        let cw = hn * mm;
        let zp = matmul(x, ps[0], n, d, 3 * d);
        let z = short_conv(ps[1], &zp, b, t, 3 * d, self.short);
        let [q, k, v] = split3(&z, n, d);
        let mut outer = vec![0.0; n * cw];
        for r in 0..n {
            for h in 0..hn {
                for i in 0..m {
                    let ki = k[r * d + h * m + i];
                    let dst = &mut outer[r * cw + h * mm + i * m..][..m];
                    for (o, vj) in dst.iter_mut().zip(&v[r * d + h * m..r * d + (h + 1) * m]) {
                        *o = ki * vj;
                    }
                }
            }
        }
        let (hf, filt) = self.filter.forward(&ps[2..7], t);
        let lc = LongConv { b, t, c: cw, f: hn, path: ConvPath::Auto };
        let mut conv = lc.forward(&hf, &outer);
        let skip = ps[7];
        for (i, cv) in conv.iter_mut().enumerate() {
            *cv += skip[(i % cw) / mm] * outer[i];
        }
        let mut o = vec![0.0; n * d];
        for r in 0..n {
            for h in 0..hn {
                for i in 0..m {
                    let qi = q[r * d + h * m + i];
                    let src = &conv[r * cw + h * mm + i * m..][..m];
                    for (ov, s) in o[r * d + h * m..r * d + (h + 1) * m].iter_mut().zip(src) {
                        *ov += qi * s;
                    }
                }
            }
        }
        let y = matmul(&o, ps[8], n, d, d);
        let cache = MhCache { b, t, x: x.to_vec(), zp, q, k, v, outer, conv, h: hf, filt, o };
        (y, Box::new(cache))
    }

    fn backward(&self, p: &[f64], cache: &Cache, dy: &[f64], dp: &mut [f64]) -> Vec<f64> {
        let c = cache.downcast_ref::<MhCache>().expect("mh hyena cache");
        let specs = self.params();
        let ps = carve(p, &specs);
        let mut gs = carve_mut(dp, &specs);
        let (d, hn, m, b, t) = (self.d, self.heads, self.m, c.b, c.t);
        let (n, mm) = (b * t, m * m);
        let cw = hn * mm;
        matmul_at_acc(&c.o, dy, n, d, d, gs[8]);
        let dout = matmul_bt(dy, ps[8], n, d, d);
        let mut dq = vec![0.0; n * d];
        let mut dconv = vec![0.0; n * cw];
        for r in 0..n {
            for h in 0..hn {
                let dor = &dout[r * d + h * m..r * d + (h + 1) * m];
                for i in 0..m {
                    let qi = c.q[r * d + h * m + i];
                    let base = r * cw + h * mm + i * m;
                    let mut s = 0.0;
                    for j in 0..m {
                        dconv[base + j] = qi * dor[j];
                        s += c.conv[base + j] * dor[j];
                    }
                    dq[r * d + h * m + i] = s;
                }
            }
        }
        let lc = LongConv { b, t, c: cw, f: hn, path: ConvPath::Auto };
        let (mut douter, dh) = lc.backward(&c.h, &c.outer, &dconv);
        let skip = ps[7];
        for i in 0..n * cw {
            let hh = (i % cw) / mm;
            douter[i] += skip[hh] * dconv[i];
            gs[7][hh] += dconv[i] * c.outer[i];
        }
        self.filter.backward(&ps[2..7], &c.filt, &dh, &mut gs[2..7]);
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        for r in 0..n {
            for h in 0..hn {
                for i in 0..m {
                    let base = r * cw + h * mm + i * m;
                    let ki = c.k[r * d + h * m + i];
                    let mut s = 0.0;
                    for j in 0..m {
                        let g = douter[base + j];
                        s += g * c.v[r * d + h * m + j];
                        dv[r * d + h * m + j] += g * ki;
                    }
                    dk[r * d + h * m + i] = s;
                }
            }
        }
        let dz = join3([&dq, &dk, &dv], n, d);
        let dzp = short_conv_backward(ps[1], &c.zp, &dz, b, t, 3 * d, self.short, gs[1]);
        matmul_at_acc(&c.x, &dzp, n, d, 3 * d, gs[0]);
        matmul_bt(&dzp, ps[0], n, d, 3 * d)
    }
}
