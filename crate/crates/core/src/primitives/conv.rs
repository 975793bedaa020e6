//! Causal convolution.
//!
//! `y_t = sum_{s <= t} w_{t - s} u_s`. Two evaluation routes are provided: a
//! direct sum (as a lower-triangular Toeplitz product for batched use) and an
//! FFT route that zero-pads to `2T`, multiplies spectra and truncates.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::linalg::{gemm_strided, View};
use crate::error::{Error, Result};

/// Above this length the batched engine switches from Toeplitz products to FFTs.
pub const FFT_THRESHOLD: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvPath {
    Direct,
    Fft,
    Auto,
}

impl ConvPath {
    fn resolve(self, t: usize) -> ConvPath {
        match self {
            ConvPath::Auto if t > FFT_THRESHOLD => ConvPath::Fft,
            ConvPath::Auto => ConvPath::Direct,
            p => p,
        }
    }
}

/// Causal convolution of `u` with a filter no longer than `u`.
pub fn causal_conv(u: &[f64], w: &[f64], path: ConvPath) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::shape("empty filter"));
    }
    if w.len() > u.len() {
        return Err(Error::shape(format!("filter length {} exceeds sequence length {}", w.len(), u.len())));
    }
    Ok(match path.resolve(u.len()) {
        ConvPath::Fft => conv_fft(u, w),
        _ => conv_direct(u, w),
    })
}

fn conv_direct(u: &[f64], w: &[f64]) -> Vec<f64> {
    (0..u.len())
        .map(|t| (0..w.len().min(t + 1)).map(|j| w[j] * u[t - j]).sum())
        .collect()
}

fn conv_fft(u: &[f64], w: &[f64]) -> Vec<f64> {
    let t = u.len();
    let n = 2 * t;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |x: &[f64]| {
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        for (d, &s) in v.iter_mut().zip(x) {
            d.re = s;
        }
        v
    };
    let mut a = pad(u);
    let mut b = pad(w);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);
    a[..t].iter().map(|c| c.re / n as f64).collect()
}

/// Batched depthwise causal convolution over `(B, T, C)` activations with
/// `F` filters stored as `(T, F)`; channel `c` uses filter `c / (C / F)`.
#[derive(Debug, Clone, Copy)]
pub struct LongConv {
    pub b: usize,
    pub t: usize,
    pub c: usize,
    pub f: usize,
    pub path: ConvPath,
}

impl LongConv {
    fn group(&self) -> usize {
        self.c / self.f
    }

    fn toeplitz(&self, h: &[f64], f: usize, out: &mut [f64]) {
        let t = self.t;
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..t {
            for j in 0..=i {
                out[i * t + j] = h[(i - j) * self.f + f];
            }
        }
    }

    pub fn forward(&self, h: &[f64], a: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; a.len()];
        match self.path.resolve(self.t) {
            ConvPath::Fft => self.fft_forward(h, a, &mut y),
            _ => self.direct_forward(h, a, &mut y),
        }
        y
    }

    /// Returns `(da, dh)` for output gradient `dy`.
    pub fn backward(&self, h: &[f64], a: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut da = vec![0.0; a.len()];
        let mut dh = vec![0.0; h.len()];
        match self.path.resolve(self.t) {
            ConvPath::Fft => self.fft_backward(h, a, dy, &mut da, &mut dh),
            _ => self.direct_backward(h, a, dy, &mut da, &mut dh),
        }
        (da, dh)
    }

    fn direct_forward(&self, h: &[f64], a: &[f64], y: &mut [f64]) {
        let (t, c, g) = (self.t, self.c, self.group());
        let mut tm = vec![0.0; t * t];
        for f in 0..self.f {
            self.toeplitz(h, f, &mut tm);
            let tv = View::rows(&tm, t);
            if g == 1 {
                let av = View { data: &a[f..], rs: c, cs: t * c };
                gemm_strided(t, t, self.b, tv, av, 0.0, &mut y[f..], c, t * c);
            } else {
                for b in 0..self.b {
                    let off = b * t * c + f * g;
                    let av = View { data: &a[off..], rs: c, cs: 1 };
                    gemm_strided(t, t, g, tv, av, 0.0, &mut y[off..], c, 1);
                }
            }
        }
    }

    fn direct_backward(&self, h: &[f64], a: &[f64], dy: &[f64], da: &mut [f64], dh: &mut [f64]) {
        let (t, c, g) = (self.t, self.c, self.group());
        let mut tm = vec![0.0; t * t];
        let mut dtm = vec![0.0; t * t];
        for f in 0..self.f {
            self.toeplitz(h, f, &mut tm);
            let tv = View::rows(&tm, t).t();
            if g == 1 {
                let dyv = View { data: &dy[f..], rs: c, cs: t * c };
                gemm_strided(t, t, self.b, tv, dyv, 0.0, &mut da[f..], c, t * c);
                let av = View { data: &a[f..], rs: t * c, cs: c };
                gemm_strided(t, self.b, t, dyv, av, 0.0, &mut dtm, t, 1);
            } else {
                for b in 0..self.b {
                    let off = b * t * c + f * g;
                    let dyv = View { data: &dy[off..], rs: c, cs: 1 };
                    gemm_strided(t, t, g, tv, dyv, 0.0, &mut da[off..], c, 1);
                    let av = View { data: &a[off..], rs: 1, cs: c };
                    gemm_strided(t, g, t, dyv, av, if b == 0 { 0.0 } else { 1.0 }, &mut dtm, t, 1);
                }
            }
            for k in 0..t {
                let s: f64 = (k..t).map(|i| dtm[i * t + i - k]).sum();
                dh[k * self.f + f] += s;
            }
        }
    }

    fn spectra(&self, h: &[f64], planner: &mut FftPlanner<f64>) -> Vec<Vec<Complex64>> {
        let n = 2 * self.t;
        let fwd = planner.plan_fft_forward(n);
        (0..self.f)
            .map(|f| {
                let mut v = vec![Complex64::new(0.0, 0.0); n];
                for s in 0..self.t {
                    v[s].re = h[s * self.f + f];
                }
                fwd.process(&mut v);
                v
            })
            .collect()
    }

    fn load(&self, x: &[f64], b: usize, ch: usize, buf: &mut [Complex64]) {
        let (t, c) = (self.t, self.c);
        for (s, v) in buf.iter_mut().enumerate() {
            *v = Complex64::new(if s < t { x[(b * t + s) * c + ch] } else { 0.0 }, 0.0);
        }
    }

    fn fft_forward(&self, h: &[f64], a: &[f64], y: &mut [f64]) {
        let (t, c, g, n) = (self.t, self.c, self.group(), 2 * self.t);
        let mut planner = FftPlanner::new();
        let hs = self.spectra(h, &mut planner);
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for b in 0..self.b {
            for ch in 0..c {
                self.load(a, b, ch, &mut buf);
                fwd.process(&mut buf);
                for (x, w) in buf.iter_mut().zip(&hs[ch / g]) {
                    *x *= w;
                }
                inv.process(&mut buf);
                for s in 0..t {
                    y[(b * t + s) * c + ch] = buf[s].re / n as f64;
                }
            }
        }
    }

    fn fft_backward(&self, h: &[f64], a: &[f64], dy: &[f64], da: &mut [f64], dh: &mut [f64]) {
        let (t, c, g, n) = (self.t, self.c, self.group(), 2 * self.t);
        let mut planner = FftPlanner::new();
        let hs = self.spectra(h, &mut planner);
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut acc = vec![vec![Complex64::new(0.0, 0.0); n]; self.f];
        let mut gy = vec![Complex64::new(0.0, 0.0); n];
        let mut ga = vec![Complex64::new(0.0, 0.0); n];
        for b in 0..self.b {
            for ch in 0..c {
                let f = ch / g;
                self.load(dy, b, ch, &mut gy);
                fwd.process(&mut gy);
                self.load(a, b, ch, &mut ga);
                fwd.process(&mut ga);
                for k in 0..n {
                    acc[f][k] += ga[k].conj() * gy[k];
                    ga[k] = hs[f][k].conj() * gy[k];
                }
                inv.process(&mut ga);
                for s in 0..t {
                    da[(b * t + s) * c + ch] = ga[s].re / n as f64;
                }
            }
        }
        for (f, spec) in acc.iter_mut().enumerate() {
            inv.process(spec);
            for s in 0..t {
                dh[s * self.f + f] += spec[s].re / n as f64;
            }
        }
    }
}
