//! Mamba: a selective state-space mixer.
//!
//! `x` is projected to `E * D` channels plus a gate branch `z`. The channel
//! stream goes through a short causal convolution and SiLU, then produces
//! per-token `(dt, B, C)`: `dt = softplus(x W_dt_low W_dt + b_dt)` per channel
//! and `B, C` of size `S` shared by every channel. Each channel runs
//! `h_t = exp(dt_t A) h_{t-1} + dt_t B_t x_t`, `y_t = C_t . h_t + D x_t`
//! with `A = -exp(A_log)`. The output is `(y * silu(z)) W_out`.

use super::hyena::{short_conv, short_conv_backward};
use super::layer::{Cache, Mixer};
use super::linalg::{matmul, matmul_at_acc, matmul_bt, matmul_bt_acc, sigmoid, silu, silu_grad, softplus};
use super::params::{carve, carve_mut, Init, ParamSpec};
use super::spec::LayerSpec;

/// Inputs of a selective scan over `T` steps, `CH` channels and `S` states.
pub struct ScanInputs<'a> {
    /// `(T, CH)` step sizes.
    pub dt: &'a [f64],
    /// `(CH, S)` continuous-time transition (negative).
    pub a: &'a [f64],
    /// `(T, S)` input maps shared across channels.
    pub b: &'a [f64],
    /// `(T, S)` output maps shared across channels.
    pub c: &'a [f64],
    /// `(T, CH)` inputs.
    pub x: &'a [f64],
    pub t: usize,
    pub ch: usize,
    pub s: usize,
}

/// Sequential scan. Returns outputs `(T, CH)` (without the skip term) and the
/// states after every step `(T, CH, S)`.
pub fn selective_scan(inp: &ScanInputs) -> (Vec<f64>, Vec<f64>) {
    let (t, ch, s) = (inp.t, inp.ch, inp.s);
    let mut states = vec![0.0; t * ch * s];
    let mut y = vec![0.0; t * ch];
    let mut h = vec![0.0; ch * s];
    for step in 0..t {
        let bt = &inp.b[step * s..(step + 1) * s];
        let ct = &inp.c[step * s..(step + 1) * s];
        for c in 0..ch {
            let dt = inp.dt[step * ch + c];
            let u = dt * inp.x[step * ch + c];
            let hc = &mut h[c * s..(c + 1) * s];
            let ac = &inp.a[c * s..(c + 1) * s];
            let mut acc = 0.0;
            for k in 0..s {
                hc[k] = (dt * ac[k]).exp() * hc[k] + u * bt[k];
                acc += ct[k] * hc[k];
            }
            y[step * ch + c] = acc;
        }
        states[step * ch * s..(step + 1) * ch * s].copy_from_slice(&h);
    }
    (y, states)
}

/// Reference loop: discretizes one step at a time into explicit
/// `(A_bar, B_bar)` matrices and applies them.
pub fn selective_scan_naive(inp: &ScanInputs) -> Vec<f64> {
    let (t, ch, s) = (inp.t, inp.ch, inp.s);
    let mut h = vec![vec![0.0; s]; ch];
    let mut y = vec![0.0; t * ch];
    for step in 0..t {
        for (c, hc) in h.iter_mut().enumerate() {
            let dt = inp.dt[step * ch + c];
            let a_bar: Vec<f64> = (0..s).map(|k| (dt * inp.a[c * s + k]).exp()).collect();
            let b_bar: Vec<f64> = (0..s).map(|k| dt * inp.b[step * s + k]).collect();
            let next: Vec<f64> = (0..s).map(|k| a_bar[k] * hc[k] + b_bar[k] * inp.x[step * ch + c]).collect();
            *hc = next;
            y[step * ch + c] = (0..s).map(|k| inp.c[step * s + k] * hc[k]).sum();
        }
    }
    y
}

/// Work-inefficient parallel prefix scan (Hillis-Steele) over the affine maps
/// `h -> a h + b`, composed associatively in `log2 T` rounds.
pub fn selective_scan_parallel(inp: &ScanInputs) -> Vec<f64> {
    let (t, ch, s) = (inp.t, inp.ch, inp.s);
    let w = ch * s;
    let mut a = vec![0.0; t * w];
    let mut b = vec![0.0; t * w];
    for step in 0..t {
        for c in 0..ch {
            let dt = inp.dt[step * ch + c];
            for k in 0..s {
                a[step * w + c * s + k] = (dt * inp.a[c * s + k]).exp();
                b[step * w + c * s + k] = dt * inp.b[step * s + k] * inp.x[step * ch + c];
            }
        }
    }
    let mut off = 1;
    while off < t {
        let (pa, pb) = (a.clone(), b.clone());
        for step in off..t {
            for i in 0..w {
                let (a1, b1) = (pa[(step - off) * w + i], pb[(step - off) * w + i]);
                let (a2, b2) = (pa[step * w + i], pb[step * w + i]);
                a[step * w + i] = a1 * a2;
                b[step * w + i] = a2 * b1 + b2;
            }
        }
        off *= 2;
    }
    let mut y = vec![0.0; t * ch];
    for step in 0..t {
        for c in 0..ch {
            y[step * ch + c] = (0..s).map(|k| inp.c[step * s + k] * b[step * w + c * s + k]).sum();
        }
    }
    y
}

pub struct Mamba {
    d: usize,
    e: usize,
    s: usize,
    r: usize,
    conv: usize,
}

struct MambaCache {
    b: usize,
    t: usize,
    x: Vec<f64>,
    xin: Vec<f64>,
    z: Vec<f64>,
    xc_pre: Vec<f64>,
    xc: Vec<f64>,
    xp: Vec<f64>,
    dt_pre: Vec<f64>,
    dt: Vec<f64>,
    a: Vec<f64>,
    /// `(B, T, ED, S)`
    states: Vec<f64>,
    yss: Vec<f64>,
    gated: Vec<f64>,
}

impl Mamba {
    pub fn new(spec: &LayerSpec) -> Self {
        Mamba { d: spec.width, e: spec.expansion * spec.width, s: spec.state_dim, r: spec.dt_rank, conv: spec.short_filter_len }
    }

    fn xp_width(&self) -> usize {
        self.r + 2 * self.s
    }
}

impl Mixer for Mamba {
    fn params(&self) -> Vec<ParamSpec> {
        let (d, e, s, r) = (self.d, self.e, self.s, self.r);
        let dt_std = 1.0 / (r as f64).sqrt();
        let cr = 1.0 / (self.conv as f64).sqrt();
        vec![
            ParamSpec::matrix("in_proj", d, 2 * e),
            ParamSpec::matrix("conv", e, self.conv).with_init(Init::Uniform(-cr, cr)).no_decay(),
            ParamSpec::matrix("x_proj", e, self.xp_width()),
            ParamSpec::matrix("dt_proj", r, e).with_init(Init::Uniform(-dt_std, dt_std)),
            ParamSpec::vector("dt_bias", e, Init::InvSoftplusLogUniform(1e-3, 1e-1)),
            ParamSpec::matrix("a_log", e, s).with_init(Init::LogRange).no_decay(),
            ParamSpec::vector("d_skip", e, Init::Const(1.0)),
            ParamSpec::matrix("out_proj", e, d),
        ]
    }

    fn forward(&self, p: &[f64], x: &[f64], b: usize, t: usize) -> (Vec<f64>, Cache) {
        let ps = carve(p, &self.params());
        let (d, e, s, r) = (self.d, self.e, self.s, self.r);
        let (n, xw) = (b * t, self.xp_width());
        let xz = matmul(x, ps[0], n, d, 2 * e);
        let mut xin = vec![0.0; n * e];
        let mut z = vec![0.0; n * e];
        for i in 0..n {
            xin[i * e..(i + 1) * e].copy_from_slice(&xz[i * 2 * e..i * 2 * e + e]);
            z[i * e..(i + 1) * e].copy_from_slice(&xz[i * 2 * e + e..(i + 1) * 2 * e]);
        }
        let xc_pre = short_conv(ps[1], &xin, b, t, e, self.conv);
        let xc: Vec<f64> = xc_pre.iter().map(|&v| silu(v)).collect();
        let xp = matmul(&xc, ps[2], n, e, xw);
        let dt_low: Vec<f64> = (0..n).flat_map(|i| xp[i * xw..i * xw + r].iter().copied()).collect();
        let mut dt_pre = matmul(&dt_low, ps[3], n, r, e);
        for row in dt_pre.chunks_mut(e) {
            for (v, bias) in row.iter_mut().zip(ps[4]) {
                *v += bias;
            }
        }
        let dt: Vec<f64> = dt_pre.iter().map(|&v| softplus(v)).collect();
        let a: Vec<f64> = ps[5].iter().map(|v| -v.exp()).collect();
        let mut yss = vec![0.0; n * e];
        let mut states = vec![0.0; n * e * s];
        for bi in 0..b {
            let rows = bi * t..(bi + 1) * t;
            let bm: Vec<f64> = rows.clone().flat_map(|i| xp[i * xw + r..i * xw + r + s].iter().copied()).collect();
            let cm: Vec<f64> = rows.clone().flat_map(|i| xp[i * xw + r + s..(i + 1) * xw].iter().copied()).collect();
            let inp = ScanInputs {
                dt: &dt[bi * t * e..(bi + 1) * t * e],
                a: &a,
                b: &bm,
                c: &cm,
                x: &xc[bi * t * e..(bi + 1) * t * e],
                t,
                ch: e,
                s,
            };
            let (y, st) = selective_scan(&inp);
            yss[bi * t * e..(bi + 1) * t * e].copy_from_slice(&y);
            states[bi * t * e * s..(bi + 1) * t * e * s].copy_from_slice(&st);
        }
        for i in 0..n * e {
            yss[i] += ps[6][i % e] * xc[i];
        }
        let gated: Vec<f64> = yss.iter().zip(&z).map(|(y, zv)| y * silu(*zv)).collect();
        let out = matmul(&gated, ps[7], n, e, d);
        let cache = MambaCache { b, t, x: x.to_vec(), xin, z, xc_pre, xc, xp, dt_pre, dt, a, states, yss, gated };
        (out, Box::new(cache))
    }

    fn backward(&self, p: &[f64], cache: &Cache, dy: &[f64], dp: &mut [f64]) -> Vec<f64> {
        let c = cache.downcast_ref::<MambaCache>().expect("mamba cache");
        let specs = self.params();
        let ps = carve(p, &specs);
        let mut gs = carve_mut(dp, &specs);
        let (d, e, s, r) = (self.d, self.e, self.s, self.r);
        let (b, t) = (c.b, c.t);
        let (n, xw) = (b * t, self.xp_width());

        matmul_at_acc(&c.gated, dy, n, e, d, gs[7]);
        let dgated = matmul_bt(dy, ps[7], n, e, d);
        let mut dyss = vec![0.0; n * e];
        let mut dz = vec![0.0; n * e];
        for i in 0..n * e {
            dyss[i] = dgated[i] * silu(c.z[i]);
            dz[i] = dgated[i] * c.yss[i] * silu_grad(c.z[i]);
        }
        let mut dxc = vec![0.0; n * e];
        for i in 0..n * e {
            dxc[i] += ps[6][i % e] * dyss[i];
            gs[6][i % e] += dyss[i] * c.xc[i];
        }
        let mut ddt = vec![0.0; n * e];
        let mut dxp = vec![0.0; n * xw];
        let mut da = vec![0.0; e * s];
        let mut dh = vec![0.0; e * s];
        for bi in 0..b {
            dh.iter_mut().for_each(|v| *v = 0.0);
            for step in (0..t).rev() {
                let row = bi * t + step;
                let bt = &c.xp[row * xw + r..row * xw + r + s];
                let ct = &c.xp[row * xw + r + s..(row + 1) * xw];
                let cur = &c.states[row * e * s..(row + 1) * e * s];
                let (dbt, dct) = dxp[row * xw + r..(row + 1) * xw].split_at_mut(s);
                for ch in 0..e {
                    let g = dyss[row * e + ch];
                    let dtc = c.dt[row * e + ch];
                    let xv = c.xc[row * e + ch];
                    let mut ddt_c = 0.0;
                    let mut dx_c = 0.0;
                    for k in 0..s {
                        let idx = ch * s + k;
                        dct[k] += g * cur[idx];
                        let dhk = dh[idx] + g * ct[k];
                        let prev = if step > 0 { c.states[(row - 1) * e * s + idx] } else { 0.0 };
                        let abar = (dtc * c.a[idx]).exp();
                        let dabar = dhk * prev * abar;
                        ddt_c += dabar * c.a[idx] + dhk * bt[k] * xv;
                        da[idx] += dabar * dtc;
                        dbt[k] += dhk * dtc * xv;
                        dx_c += dhk * dtc * bt[k];
                        dh[idx] = dhk * abar;
                    }
                    ddt[row * e + ch] = ddt_c;
                    dxc[row * e + ch] += dx_c;
                }
            }
        }
        for (g, (&dav, &av)) in gs[5].iter_mut().zip(da.iter().zip(&c.a)) {
            *g += dav * av;
        }
        let ddt_pre: Vec<f64> = ddt.iter().zip(&c.dt_pre).map(|(g, &v)| g * sigmoid(v)).collect();
        for row in ddt_pre.chunks(e) {
            for (g, v) in gs[4].iter_mut().zip(row) {
                *g += v;
            }
        }
        let dt_low: Vec<f64> = (0..n).flat_map(|i| c.xp[i * xw..i * xw + r].iter().copied()).collect();
        matmul_at_acc(&dt_low, &ddt_pre, n, r, e, gs[3]);
        let ddt_low = matmul_bt(&ddt_pre, ps[3], n, r, e);
        for i in 0..n {
            dxp[i * xw..i * xw + r].copy_from_slice(&ddt_low[i * r..(i + 1) * r]);
        }
        matmul_at_acc(&c.xc, &dxp, n, e, xw, gs[2]);
        matmul_bt_acc(&dxp, ps[2], n, e, xw, &mut dxc);
        let dxc_pre: Vec<f64> = dxc.iter().zip(&c.xc_pre).map(|(g, &v)| g * silu_grad(v)).collect();
        let dxin = short_conv_backward(ps[1], &c.xin, &dxc_pre, b, t, e, self.conv, gs[1]);
        let mut dxz = vec![0.0; n * 2 * e];
        for i in 0..n {
            dxz[i * 2 * e..i * 2 * e + e].copy_from_slice(&dxin[i * e..(i + 1) * e]);
            dxz[i * 2 * e + e..(i + 1) * 2 * e].copy_from_slice(&dz[i * e..(i + 1) * e]);
        }
        matmul_at_acc(&c.x, &dxz, n, d, 2 * e, gs[0]);
        matmul_bt(&dxz, ps[0], n, d, 2 * e)
    }
}
