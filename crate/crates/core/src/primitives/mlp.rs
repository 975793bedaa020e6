//! Channel mixers: SwiGLU and a top-K routed mixture of SwiGLU experts.

use super::layer::{Cache, Mixer};
use super::linalg::{matmul, matmul_at_acc, matmul_bt, matmul_bt_acc, silu, silu_grad, softmax_row};
use super::params::{carve, carve_mut, ParamSpec};
use super::spec::LayerSpec;

/// Activations of a SwiGLU block over `n` rows.
struct GluActs {
    a: Vec<f64>,
    g: Vec<f64>,
    h: Vec<f64>,
}

/// `y = (silu(x w1) * (x w3)) w2`.
fn glu_forward(w1: &[f64], w3: &[f64], w2: &[f64], x: &[f64], n: usize, d: usize, f: usize) -> (Vec<f64>, GluActs) {
    let a = matmul(x, w1, n, d, f);
    let g = matmul(x, w3, n, d, f);
    let h: Vec<f64> = a.iter().zip(&g).map(|(&a, &g)| silu(a) * g).collect();
    let y = matmul(&h, w2, n, f, d);
    (y, GluActs { a, g, h })
}

/// Accumulates `[dw1, dw3, dw2]` and returns `dx`.
#[allow(clippy::too_many_arguments)]
fn glu_backward(
    w: [&[f64]; 3],
    dw: [&mut [f64]; 3],
    x: &[f64],
    acts: &GluActs,
    dy: &[f64],
    n: usize,
    d: usize,
    f: usize,
) -> Vec<f64> {
    let [w1, w3, w2] = w;
    let [dw1, dw3, dw2] = dw;
    matmul_at_acc(&acts.h, dy, n, f, d, dw2);
    let dh = matmul_bt(dy, w2, n, f, d);
    let mut da = vec![0.0; n * f];
    let mut dg = vec![0.0; n * f];
    for i in 0..n * f {
        da[i] = dh[i] * acts.g[i] * silu_grad(acts.a[i]);
        dg[i] = dh[i] * silu(acts.a[i]);
    }
    matmul_at_acc(x, &da, n, d, f, dw1);
    matmul_at_acc(x, &dg, n, d, f, dw3);
    let mut dx = matmul_bt(&da, w1, n, d, f);
    matmul_bt_acc(&dg, w3, n, d, f, &mut dx);
    dx
}

pub struct Swiglu {
    d: usize,
    f: usize,
}

struct GluCache {
    x: Vec<f64>,
    n: usize,
    acts: GluActs,
}

impl Swiglu {
    pub fn new(d: usize, inner: usize) -> Self {
        Swiglu { d, f: inner }
    }
}

impl Mixer for Swiglu {
    fn params(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::matrix("w1", self.d, self.f),
            ParamSpec::matrix("w3", self.d, self.f),
            ParamSpec::matrix("w2", self.f, self.d),
        ]
    }

    fn forward(&self, p: &[f64], x: &[f64], b: usize, t: usize) -> (Vec<f64>, Cache) {
        let ps = carve(p, &self.params());
        let n = b * t;
        let (y, acts) = glu_forward(ps[0], ps[1], ps[2], x, n, self.d, self.f);
        (y, Box::new(GluCache { x: x.to_vec(), n, acts }))
    }

    fn backward(&self, p: &[f64], cache: &Cache, dy: &[f64], dp: &mut [f64]) -> Vec<f64> {
        let c = cache.downcast_ref::<GluCache>().expect("swiglu cache");
        let specs = self.params();
        let ps = carve(p, &specs);
        let mut gs = carve_mut(dp, &specs).into_iter();
        let (g1, g3, g2) = (gs.next().unwrap(), gs.next().unwrap(), gs.next().unwrap());
        glu_backward([ps[0], ps[1], ps[2]], [g1, g3, g2], &c.x, &c.acts, dy, c.n, self.d, self.f)
    }
}

/// Indices of the `k` largest scores, highest first; ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Per-token routing: selected experts and their renormalized softmax weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    pub k: usize,
    pub experts: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Routing {
    pub fn compute(logits: &[f64], n: usize, a: usize, k: usize) -> Self {
        let mut experts = Vec::with_capacity(n * k);
        let mut weights = Vec::with_capacity(n * k);
        for row in logits.chunks(a).take(n) {
            let sel = top_k(row, k);
            let mut w: Vec<f64> = sel.iter().map(|&e| row[e]).collect();
            softmax_row(&mut w);
            experts.extend(sel);
            weights.extend(w);
        }
        Routing { k, experts, weights }
    }

    /// Gradient of the selected logits given gradients of the weights.
    pub fn logit_grads(&self, dweights: &[f64], a: usize) -> Vec<f64> {
        let n = self.experts.len() / self.k;
        let mut out = vec![0.0; n * a];
        for i in 0..n {
            let w = &self.weights[i * self.k..(i + 1) * self.k];
            let dw = &dweights[i * self.k..(i + 1) * self.k];
            let dot: f64 = w.iter().zip(dw).map(|(a, b)| a * b).sum();
            for j in 0..self.k {
                out[i * a + self.experts[i * self.k + j]] += w[j] * (dw[j] - dot);
            }
        }
        out
    }

    /// `(token, slot)` pairs routed to expert `e`, in token order.
    pub fn assigned(&self, e: usize) -> Vec<(usize, usize)> {
        self.experts
            .iter()
            .enumerate()
            .filter(|(_, &x)| x == e)
            .map(|(i, _)| (i / self.k, i))
            .collect()
    }
}

pub struct MoeMlp {
    d: usize,
    a: usize,
    k: usize,
    f: usize,
}

/// Assigned `(token, slot)` pairs, gathered input, activations and output of
/// one expert.
type ExpertCache = (Vec<(usize, usize)>, Vec<f64>, GluActs, Vec<f64>);

struct MoeCache {
    x: Vec<f64>,
    n: usize,
    routing: Routing,
    experts: Vec<ExpertCache>,
}

impl MoeMlp {
    pub fn new(spec: &LayerSpec) -> Self {
        MoeMlp { d: spec.width, a: spec.experts, k: spec.active_experts, f: spec.expert_width }
    }
}

impl Mixer for MoeMlp {
    fn params(&self) -> Vec<ParamSpec> {
        let mut v = vec![ParamSpec::matrix("router", self.d, self.a)];
        for e in 0..self.a {
            v.push(ParamSpec::matrix(&format!("expert{e}.w1"), self.d, self.f));
            v.push(ParamSpec::matrix(&format!("expert{e}.w3"), self.d, self.f));
            v.push(ParamSpec::matrix(&format!("expert{e}.w2"), self.f, self.d));
        }
        v
    }

    fn forward(&self, p: &[f64], x: &[f64], b: usize, t: usize) -> (Vec<f64>, Cache) {
        let ps = carve(p, &self.params());
        let (d, n) = (self.d, b * t);
        let logits = matmul(x, ps[0], n, d, self.a);
        let routing = Routing::compute(&logits, n, self.a, self.k);
        let mut y = vec![0.0; n * d];
        let mut experts = Vec::with_capacity(self.a);
        for e in 0..self.a {
            let rows = routing.assigned(e);
            let xe: Vec<f64> = rows.iter().flat_map(|&(i, _)| x[i * d..(i + 1) * d].iter().copied()).collect();
            let w = &ps[1 + 3 * e..4 + 3 * e];
            let (ye, acts) = glu_forward(w[0], w[1], w[2], &xe, rows.len(), d, self.f);
            for (r, &(i, slot)) in rows.iter().enumerate() {
                let wt = routing.weights[slot];
                for j in 0..d {
                    y[i * d + j] += wt * ye[r * d + j];
                }
            }
            experts.push((rows, xe, acts, ye));
        }
        (y, Box::new(MoeCache { x: x.to_vec(), n, routing, experts }))
    }

    fn backward(&self, p: &[f64], cache: &Cache, dy: &[f64], dp: &mut [f64]) -> Vec<f64> {
        let c = cache.downcast_ref::<MoeCache>().expect("moe cache");
        let specs = self.params();
        let ps = carve(p, &specs);
        let mut gs = carve_mut(dp, &specs);
        let (d, n) = (self.d, c.n);
        let mut dx = vec![0.0; n * d];
        let mut dweights = vec![0.0; n * self.k];
        for (e, (rows, xe, acts, ye)) in c.experts.iter().enumerate() {
            let mut dye = vec![0.0; rows.len() * d];
            for (r, &(i, slot)) in rows.iter().enumerate() {
                let wt = c.routing.weights[slot];
                let mut s = 0.0;
                for j in 0..d {
                    dye[r * d + j] = wt * dy[i * d + j];
                    s += dy[i * d + j] * ye[r * d + j];
                }
                dweights[slot] = s;
            }
            let w = [ps[1 + 3 * e], ps[2 + 3 * e], ps[3 + 3 * e]];
            let [g1, g3, g2] = &mut gs[1 + 3 * e..4 + 3 * e] else { unreachable!() };
            let dxe = glu_backward(w, [&mut **g1, &mut **g3, &mut **g2], xe, acts, &dye, rows.len(), d, self.f);
            for (r, &(i, _)) in rows.iter().enumerate() {
                for j in 0..d {
                    dx[i * d + j] += dxe[r * d + j];
                }
            }
        }
        let dlogits = c.routing.logit_grads(&dweights, self.a);
        matmul_at_acc(&c.x, &dlogits, n, d, self.a, gs[0]);
        matmul_bt_acc(&dlogits, ps[0], n, d, self.a, &mut dx);
        dx
    }
}
