//! Full models: embedding, pre-norm residual layers, final norm, tied
//! unembedding, and the optional reconstruction head used by compression.

use super::layer::{Cache, Layer};
use super::linalg::{matmul, matmul_at_acc, matmul_bt, silu, silu_grad, softmax_row};
use super::params::{carve, carve_mut, total_size, Init, ParamSpec};
use super::spec::ArchitectureSpec;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

pub const NORM_EPS: f64 = 1e-5;

/// `y = x / rms(x) * g`, row-wise over `(n, d)`. Returns `y` and `1 / rms`.
pub fn rms_norm(x: &[f64], g: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut inv = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let r = 1.0 / (ms + NORM_EPS).sqrt();
        inv[i] = r;
        for j in 0..d {
            y[i * d + j] = row[j] * r * g[j];
        }
    }
    (y, inv)
}

/// Backward of [`rms_norm`]: returns `dx`, accumulates `dg`.
pub fn rms_norm_backward(x: &[f64], g: &[f64], inv: &[f64], dy: &[f64], d: usize, dg: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    for (i, &r) in inv.iter().enumerate() {
        let row = &x[i * d..(i + 1) * d];
        let dyr = &dy[i * d..(i + 1) * d];
        let mut dot = 0.0;
        for j in 0..d {
            let xh = row[j] * r;
            dg[j] += dyr[j] * xh;
            dot += dyr[j] * g[j] * xh;
        }
        dot /= d as f64;
        for j in 0..d {
            dx[i * d + j] = r * (dyr[j] * g[j] - row[j] * r * dot);
        }
    }
    dx
}

/// Fixed sinusoidal embedding of position `i` in `d` dimensions.
pub fn sinusoidal(i: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let freq = 10_000f64.powf(-((j / 2 * 2) as f64) / d as f64);
            let a = i as f64 * freq;
            if j % 2 == 0 {
                a.sin()
            } else {
                a.cos()
            }
        })
        .collect()
}

/// A training or evaluation batch of `b` sequences of length `t`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub b: usize,
    pub t: usize,
    pub tokens: Vec<u32>,
    pub targets: Vec<u32>,
    pub mask: Vec<bool>,
}

impl Batch {
    pub fn from_samples(samples: &[&crate::tasks::Sample]) -> Result<Self> {
        let t = samples.first().map_or(0, |s| s.len());
        let mut batch = Batch { b: samples.len(), t, tokens: vec![], targets: vec![], mask: vec![] };
        for s in samples {
            if s.len() != t {
                return Err(Error::shape("samples in a batch differ in length"));
            }
            batch.tokens.extend(&s.input);
            batch.targets.extend(&s.target);
            batch.mask.extend(&s.mask);
        }
        Ok(batch)
    }

    pub fn masked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Summed cross-entropy, scored position count and correct argmax count.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stats {
    pub loss_sum: f64,
    pub count: usize,
    pub correct: usize,
}

impl Stats {
    pub fn add(&mut self, o: Stats) {
        self.loss_sum += o.loss_sum;
        self.count += o.count;
        self.correct += o.correct;
    }

    pub fn mean_loss(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.loss_sum / self.count as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

/// Cross-entropy of one row of logits; writes `softmax - onehot` into `grad`
/// when given. Returns `(loss, argmax == target)`; ties resolve to the lowest id.
fn xent(logits: &[f64], target: usize, grad: Option<&mut [f64]>) -> (f64, bool) {
    let mut p = logits.to_vec();
    let lse = softmax_row(&mut p);
    let best = (0..logits.len()).fold(0, |b, j| if logits[j] > logits[b] { j } else { b });
    if let Some(g) = grad {
        g.copy_from_slice(&p);
        g[target] -= 1.0;
    }
    (lse - logits[target], best == target)
}

/// The reconstruction decoder: `h_last + PE(i) -> Linear(D, 2D) -> SiLU ->
/// Linear(2D, V)` predicting token `i`.
#[derive(Debug, Clone, Copy)]
struct Head {
    d: usize,
    v: usize,
}

impl Head {
    fn params(&self) -> Vec<ParamSpec> {
        let (d, v) = (self.d, self.v);
        vec![
            ParamSpec::matrix("head.w1", d, 2 * d),
            ParamSpec::vector("head.b1", 2 * d, Init::Const(0.0)),
            ParamSpec::matrix("head.w2", 2 * d, v),
            ParamSpec::vector("head.b2", v, Init::Const(0.0)),
        ]
    }
}

struct LayerRun {
    x_in: Vec<f64>,
    normed_inv: Option<Vec<f64>>,
    cache: Cache,
}

struct ForwardCache {
    b: usize,
    t: usize,
    runs: Vec<LayerRun>,
    x_final: Vec<f64>,
    final_inv: Vec<f64>,
    hidden: Vec<f64>,
}

pub struct Model {
    pub arch: ArchitectureSpec,
    layers: Vec<Layer>,
    head: Option<Head>,
    specs: Vec<ParamSpec>,
    /// Start offset of each layer's mixer parameters and optional norm gain.
    offsets: Vec<(usize, Option<usize>, usize)>,
    embed: usize,
    final_norm: usize,
    head_off: usize,
}

impl Model {
    /// Builds a model; `head` adds the reconstruction decoder.
    pub fn new(arch: &ArchitectureSpec, head: bool) -> Result<Self> {
        arch.validate()?;
        let (d, v) = (arch.width, arch.vocab_size);
        let mut specs = vec![ParamSpec::matrix("embed", v, d)];
        let mut layers = Vec::new();
        let mut offsets = Vec::new();
        let mut off = v * d;
        for (i, ls) in arch.layers.iter().enumerate() {
            let layer = Layer::new(ls)?;
            let norm = if ls.norm {
                specs.push(ParamSpec::vector(&format!("layers.{i}.norm"), d, Init::Const(1.0)));
                off += d;
                Some(off - d)
            } else {
                None
            };
            let start = off;
            for s in layer.param_specs() {
                off += s.size();
                specs.push(ParamSpec { name: format!("layers.{i}.{}", s.name), ..s });
            }
            offsets.push((start, norm, off));
            layers.push(layer);
        }
        specs.push(ParamSpec::vector("final_norm", d, Init::Const(1.0)));
        let final_norm = off;
        off += d;
        let head = head.then_some(Head { d, v });
        if let Some(h) = head {
            specs.extend(h.params());
        }
        Ok(Model { arch: arch.clone(), layers, head, specs, offsets, embed: 0, final_norm, head_off: off })
    }

    pub fn has_head(&self) -> bool {
        self.head.is_some()
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        total_size(&self.specs)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Deterministic initialization; every slot draws from its own stream.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut p = vec![0.0; self.param_count()];
        let mut off = 0;
        for (i, s) in self.specs.iter().enumerate() {
            let mut r = rng::stream("model/init", seed, i as u64);
            s.fill(&mut r, &mut p[off..off + s.size()]);
            off += s.size();
        }
        p
    }

    /// Decay flag for every parameter entry.
    pub fn decay_mask(&self) -> Vec<bool> {
        self.specs.iter().flat_map(|s| std::iter::repeat_n(s.decay, s.size())).collect()
    }

    /// Named tensors of a parameter (or gradient) vector.
    pub fn named_tensors(&self, p: &[f64]) -> Vec<(String, Tensor)> {
        self.specs
            .iter()
            .zip(carve(p, &self.specs))
            .map(|(s, v)| (s.name.clone(), Tensor { shape: s.shape.clone(), data: v.to_vec() }))
            .collect()
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.arch.vocab_size) {
            Some(t) => Err(Error::shape(format!("token id {t} outside vocabulary of {}", self.arch.vocab_size))),
            None => Ok(()),
        }
    }

    fn forward_hidden(&self, p: &[f64], tokens: &[u32], b: usize, t: usize) -> ForwardCache {
        let d = self.arch.width;
        let emb = &p[self.embed..self.embed + self.arch.vocab_size * d];
        let mut x: Vec<f64> = tokens.iter().flat_map(|&tk| emb[tk as usize * d..][..d].iter().copied()).collect();
        let mut runs = Vec::with_capacity(self.layers.len());
        for (layer, &(start, norm, end)) in self.layers.iter().zip(&self.offsets) {
            let (input, inv) = match norm {
                Some(g) => {
                    let (y, inv) = rms_norm(&x, &p[g..g + d], d);
                    (y, Some(inv))
                }
                None => (x.clone(), None),
            };
            let (y, cache) = layer.mixer.forward(&p[start..end], &input, b, t);
            let x_in = std::mem::take(&mut x);
            x = x_in.iter().zip(&y).map(|(a, c)| a + c).collect();
            runs.push(LayerRun { x_in, normed_inv: inv, cache });
        }
        let (hidden, final_inv) = rms_norm(&x, &p[self.final_norm..self.final_norm + d], d);
        ForwardCache { b, t, runs, x_final: x, final_inv, hidden }
    }

    /// Per-position logits `(B * T, V)` through the tied unembedding.
    pub fn logits(&self, p: &[f64], tokens: &[u32], b: usize, t: usize) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        let fc = self.forward_hidden(p, tokens, b, t);
        let (d, v) = (self.arch.width, self.arch.vocab_size);
        let out = matmul_bt(&fc.hidden, &p[..v * d], b * t, v, d);
        crate::primitives::tensor::check_finite(&out, "logits")?;
        Ok(out)
    }

    /// Summed loss statistics and, when `grad` is given, the gradient of the
    /// summed masked cross-entropy accumulated into it.
    pub fn run(&self, p: &[f64], batch: &Batch, grad: Option<&mut [f64]>) -> Result<Stats> {
        self.check_tokens(&batch.tokens)?;
        let (b, t, d, v) = (batch.b, batch.t, self.arch.width, self.arch.vocab_size);
        let n = b * t;
        let fc = self.forward_hidden(p, &batch.tokens, b, t);
        let mut stats = Stats::default();
        let want_grad = grad.is_some();
        let mut dhidden = vec![0.0; if want_grad { n * d } else { 0 }];
        let mut dp_local: Vec<f64> = Vec::new();
        let grad = match grad {
            Some(g) => g,
            None => &mut dp_local[..],
        };
        match self.head {
            None => {
                let logits = matmul_bt(&fc.hidden, &p[..v * d], n, v, d);
                crate::primitives::tensor::check_finite(&logits, "logits")?;
                let mut dlogits = vec![0.0; if want_grad { n * v } else { 0 }];
                for i in (0..n).filter(|&i| batch.mask[i]) {
                    let row = &logits[i * v..(i + 1) * v];
                    let g = want_grad.then(|| &mut dlogits[i * v..(i + 1) * v]);
                    let (l, ok) = xent(row, batch.targets[i] as usize, g);
                    stats.loss_sum += l;
                    stats.count += 1;
                    stats.correct += ok as usize;
                }
                if want_grad {
                    matmul_at_acc(&dlogits, &fc.hidden, n, v, d, &mut grad[..v * d]);
                    dhidden = super::linalg::matmul(&dlogits, &p[..v * d], n, v, d);
                }
            }
            Some(h) => {
                let hp_specs = h.params();
                let hp = carve(&p[self.head_off..], &hp_specs);
                for bi in 0..b {
                    let last = &fc.hidden[(bi * t + t - 1) * d..(bi * t + t) * d];
                    let rows: Vec<usize> = (0..t).filter(|&i| batch.mask[bi * t + i]).collect();
                    if rows.is_empty() {
                        continue;
                    }
                    let m = rows.len();
                    let mut inp = vec![0.0; m * d];
                    for (r, &i) in rows.iter().enumerate() {
                        let pe = sinusoidal(i, d);
                        for j in 0..d {
                            inp[r * d + j] = last[j] + pe[j];
                        }
                    }
                    let mut z1 = matmul(&inp, hp[0], m, d, 2 * d);
                    for row in z1.chunks_mut(2 * d) {
                        row.iter_mut().zip(hp[1]).for_each(|(a, c)| *a += c);
                    }
                    let act: Vec<f64> = z1.iter().map(|&z| silu(z)).collect();
                    let mut logits = matmul(&act, hp[2], m, 2 * d, v);
                    for row in logits.chunks_mut(v) {
                        row.iter_mut().zip(hp[3]).for_each(|(a, c)| *a += c);
                    }
                    crate::primitives::tensor::check_finite(&logits, "logits")?;
                    let mut dlogits = vec![0.0; m * v];
                    for (r, &i) in rows.iter().enumerate() {
                        let g = want_grad.then(|| &mut dlogits[r * v..(r + 1) * v]);
                        let (l, ok) = xent(&logits[r * v..(r + 1) * v], batch.targets[bi * t + i] as usize, g);
                        stats.loss_sum += l;
                        stats.count += 1;
                        stats.correct += ok as usize;
                    }
                    if want_grad {
                        let mut hg = carve_mut(&mut grad[self.head_off..], &hp_specs);
                        matmul_at_acc(&act, &dlogits, m, 2 * d, v, hg[2]);
                        for row in dlogits.chunks(v) {
                            hg[3].iter_mut().zip(row).for_each(|(a, c)| *a += c);
                        }
                        let dact = matmul_bt(&dlogits, hp[2], m, 2 * d, v);
                        let dz1: Vec<f64> = dact.iter().zip(&z1).map(|(g, &z)| g * silu_grad(z)).collect();
                        matmul_at_acc(&inp, &dz1, m, d, 2 * d, hg[0]);
                        for row in dz1.chunks(2 * d) {
                            hg[1].iter_mut().zip(row).for_each(|(a, c)| *a += c);
                        }
                        let dinp = matmul_bt(&dz1, hp[0], m, d, 2 * d);
                        let dl = &mut dhidden[(bi * t + t - 1) * d..(bi * t + t) * d];
                        for row in dinp.chunks(d) {
                            dl.iter_mut().zip(row).for_each(|(a, c)| *a += c);
                        }
                    }
                }
            }
        }
        if want_grad && stats.count > 0 {
            self.backward_hidden(p, &fc, &dhidden, &batch.tokens, grad);
        }
        Ok(stats)
    }

    fn backward_hidden(&self, p: &[f64], fc: &ForwardCache, dhidden: &[f64], tokens: &[u32], grad: &mut [f64]) {
        let d = self.arch.width;
        let fnorm = self.final_norm;
        let mut dx = {
            let (gfin, _) = (&p[fnorm..fnorm + d], ());
            rms_norm_backward(&fc.x_final, gfin, &fc.final_inv, dhidden, d, &mut grad[fnorm..fnorm + d])
        };
        for ((layer, &(start, norm, end)), run) in self.layers.iter().zip(&self.offsets).zip(&fc.runs).rev() {
            let dinput = layer.mixer.backward(&p[start..end], &run.cache, &dx, &mut grad[start..end]);
            let dres = match (norm, &run.normed_inv) {
                (Some(g), Some(inv)) => rms_norm_backward(&run.x_in, &p[g..g + d], inv, &dinput, d, &mut grad[g..g + d]),
                _ => dinput,
            };
            for (a, c) in dx.iter_mut().zip(&dres) {
                *a += c;
            }
        }
        let _ = (fc.b, fc.t);
        for (i, &tk) in tokens.iter().enumerate() {
            let row = &mut grad[self.embed + tk as usize * d..][..d];
            row.iter_mut().zip(&dx[i * d..(i + 1) * d]).for_each(|(a, c)| *a += c);
        }
    }

    /// Mean masked cross-entropy and its gradient.
    pub fn loss_and_grad(&self, p: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let mut g = vec![0.0; p.len()];
        let stats = self.run(p, batch, Some(&mut g))?;
        if stats.count > 0 {
            let s = 1.0 / stats.count as f64;
            g.iter_mut().for_each(|v| *v *= s);
        }
        Ok((stats.mean_loss(), g))
    }
}

/// Logits `(T, V)` of `arch` with parameters `params` for one token sequence.
pub fn forward_model(arch: &ArchitectureSpec, params: &[f64], tokens: &[u32]) -> Result<Tensor> {
    let model = Model::new(arch, false)?;
    if params.len() != model.param_count() {
        return Err(Error::shape(format!("expected {} parameters, got {}", model.param_count(), params.len())));
    }
    let logits = model.logits(params, tokens, 1, tokens.len())?;
    Tensor::new(vec![tokens.len(), arch.vocab_size], logits)
}

/// Mean masked cross-entropy over one sequence and its gradient.
pub fn backward_model(
    arch: &ArchitectureSpec,
    params: &[f64],
    tokens: &[u32],
    targets: &[u32],
    mask: &[bool],
) -> Result<(f64, Vec<f64>)> {
    let model = Model::new(arch, false)?;
    if tokens.len() != targets.len() || tokens.len() != mask.len() {
        return Err(Error::shape("tokens, targets and mask differ in length"));
    }
    let batch = Batch { b: 1, t: tokens.len(), tokens: tokens.to_vec(), targets: targets.to_vec(), mask: mask.to_vec() };
    model.loss_and_grad(params, &batch)
}
