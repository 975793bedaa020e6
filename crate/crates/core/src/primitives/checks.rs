//! Cross-layer checks: finite-difference gradients, causality, batching, and
//! reductions of each layer to a simpler closed form.

use super::attention::{attention_weights, Attention};
use super::gla::gated_recurrence;
use super::hyena::gated_long_conv;
use super::layer::{build, Layer, Mixer};
use super::mamba::{selective_scan, selective_scan_naive, selective_scan_parallel, ScanInputs};
use super::mlp::{MoeMlp, Swiglu};
use super::model::{Batch, Model};
use super::params::{carve_mut, total_size};
use super::recurrence::headed_state_update;
use super::spec::{ArchitectureSpec, LayerKind, LayerSpec};
use super::tensor::Tensor;
use crate::rng::{normal, stream};

fn randn(n: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut r = stream("checks", seed, n as u64);
    (0..n).map(|_| scale * normal(&mut r)).collect()
}

fn small(kind: LayerKind) -> LayerSpec {
    let mut s = LayerSpec::new(kind, 8);
    s.filter_order = 4;
    s.glu_inner = 12;
    s.gate_rank = 2;
    s.experts = 4;
    s.active_experts = 2;
    s.expert_width = 3;
    match kind {
        LayerKind::Attention | LayerKind::MhHyena | LayerKind::Gla => s.with_heads(2),
        LayerKind::HyenaExperts => {
            s.expert_width = 2;
            s
        }
        _ => s,
    }
}

/// Initialized parameters plus noise so no entry sits at a special value.
fn params_for(layer: &Layer, seed: u64) -> Vec<f64> {
    let mut p = layer.init(&mut stream("checks/init", seed, 0));
    for (a, n) in p.iter_mut().zip(randn(layer.param_count(), seed + 7, 0.1)) {
        *a += n;
    }
    p
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Central differences of `<r, f(p, x)>` against the analytic backward pass.
fn gradcheck(mixer: &dyn Mixer, p: &[f64], x: &[f64], b: usize, t: usize) -> f64 {
    let (y, cache) = mixer.forward(p, x, b, t);
    let r = randn(y.len(), 99, 1.0);
    let obj = |p: &[f64], x: &[f64]| -> f64 { mixer.forward(p, x, b, t).0.iter().zip(&r).map(|(a, c)| a * c).sum() };
    let mut dp = vec![0.0; p.len()];
    let dx = mixer.backward(p, &cache, &r, &mut dp);
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let mut pp = p.to_vec();
    for i in 0..p.len() {
        pp[i] = p[i] + eps;
        let hi = obj(&pp, x);
        pp[i] = p[i] - eps;
        let lo = obj(&pp, x);
        pp[i] = p[i];
        worst = worst.max(rel((hi - lo) / (2.0 * eps), dp[i]));
    }
    let mut xx = x.to_vec();
    for i in 0..x.len() {
        xx[i] = x[i] + eps;
        let hi = obj(p, &xx);
        xx[i] = x[i] - eps;
        let lo = obj(p, &xx);
        xx[i] = x[i];
        worst = worst.max(rel((hi - lo) / (2.0 * eps), dx[i]));
    }
    worst
}

#[test]
fn every_layer_passes_gradcheck() {
    for kind in LayerKind::ALL {
        let layer = Layer::new(&small(kind)).unwrap();
        let p = params_for(&layer, 1);
        let (b, t) = (2, 6);
        let x = randn(b * t * 8, 2, 1.0);
        let worst = gradcheck(layer.mixer.as_ref(), &p, &x, b, t);
        assert!(worst <= 1e-5, "{kind}: worst relative gradient error {worst:e}");
    }
}

#[test]
fn sequence_mixers_are_causal() {
    for kind in LayerKind::ALL {
        let layer = Layer::new(&small(kind)).unwrap();
        let p = params_for(&layer, 3);
        let t = 9;
        let x = randn(t * 8, 4, 1.0);
        let (y0, _) = layer.mixer.forward(&p, &x, 1, t);
        for s in 0..t {
            let mut xs = x.clone();
            for v in &mut xs[s * 8..(s + 1) * 8] {
                *v += 1.0;
            }
            let (y1, _) = layer.mixer.forward(&p, &xs, 1, t);
            assert_eq!(&y0[..s * 8], &y1[..s * 8], "{kind}: position {s} leaks backwards");
            assert_ne!(&y0[s * 8..(s + 1) * 8], &y1[s * 8..(s + 1) * 8], "{kind}: position {s} is ignored");
        }
    }
}

#[test]
fn batch_rows_are_independent() {
    for kind in LayerKind::ALL {
        let layer = Layer::new(&small(kind)).unwrap();
        let p = params_for(&layer, 5);
        let t = 7;
        let x = randn(3 * t * 8, 6, 1.0);
        let (yb, _) = layer.mixer.forward(&p, &x, 3, t);
        for bi in 0..3 {
            let (y, _) = layer.mixer.forward(&p, &x[bi * t * 8..(bi + 1) * t * 8], 1, t);
            let diff = y.iter().zip(&yb[bi * t * 8..]).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-12, "{kind}: batch row {bi} differs by {diff:e}");
        }
    }
}

#[test]
fn layer_apply_checks_shapes() {
    let layer = Layer::new(&small(LayerKind::Hyena)).unwrap();
    let p = params_for(&layer, 1);
    let good = Tensor::new(vec![5, 8], randn(40, 1, 1.0)).unwrap();
    assert_eq!(layer.apply(&p, &good).unwrap().shape, vec![5, 8]);
    let wide = Tensor::new(vec![5, 4], randn(20, 1, 1.0)).unwrap();
    assert!(matches!(layer.apply(&p, &wide), Err(crate::Error::Shape(_))));
    assert!(matches!(layer.apply(&p[1..], &good), Err(crate::Error::Shape(_))));
}

#[test]
fn attention_rows_sum_to_one() {
    let spec = small(LayerKind::Attention);
    let layer = Attention::new(&spec);
    let p = params_for(&Layer::new(&spec).unwrap(), 8);
    let t = 11;
    let w = attention_weights(&layer, &p, &randn(t * 8, 9, 1.0), t);
    for (r, row) in w.chunks(t).enumerate() {
        let i = r % t;
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row[i + 1..].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn single_token_attention_is_the_value_path() {
    let spec = small(LayerKind::Attention);
    let layer = Layer::new(&spec).unwrap();
    let p = params_for(&layer, 10);
    let x = randn(8, 11, 1.0);
    let (y, _) = layer.mixer.forward(&p, &x, 1, 1);
    let named = layer.named(&p);
    let get = |n: &str| named.iter().find(|(k, _)| k == n).unwrap().1;
    let v = super::linalg::matmul(&x, get("wv"), 1, 8, 8);
    let expect = super::linalg::matmul(&v, get("wo"), 1, 8, 8);
    for (a, c) in y.iter().zip(&expect) {
        assert!((a - c).abs() < 1e-12);
    }
}

#[test]
fn ungated_recurrence_is_the_headed_state_update() {
    let (t, m) = (13, 3);
    let (q, k, v) = (randn(t * m, 1, 1.0), randn(t * m, 2, 1.0), randn(t * m, 3, 1.0));
    let (y, states) = gated_recurrence(&q, &k, &v, &vec![1.0; t * m], t, m);
    let tq = Tensor::new(vec![t, m], q.clone()).unwrap();
    let tk = Tensor::new(vec![t, m], k.clone()).unwrap();
    let tv = Tensor::new(vec![t, m], v.clone()).unwrap();
    let (y_ref, x_ref) = headed_state_update(&tq, &tk, &tv).unwrap();
    assert!(y.iter().zip(&y_ref.data).all(|(a, c)| (a - c).abs() < 1e-10));
    assert!(states[(t - 1) * m * m..].iter().zip(&x_ref.data).all(|(a, c)| (a - c).abs() < 1e-10));

    // A closed gate forgets everything but the current step.
    let (y0, _) = gated_recurrence(&q, &k, &v, &vec![0.0; t * m], t, m);
    for s in 0..t {
        let kq: f64 = (0..m).map(|i| k[s * m + i] * q[s * m + i]).sum();
        for j in 0..m {
            assert!((y0[s * m + j] - kq * v[s * m + j]).abs() < 1e-12);
        }
    }
}

#[test]
fn single_expert_moe_is_the_dense_block() {
    let mut spec = small(LayerKind::MoeMlp);
    spec.experts = 1;
    spec.active_experts = 1;
    let moe = MoeMlp::new(&spec);
    let dense = Swiglu::new(8, spec.expert_width);
    let p = randn(total_size(&moe.params()), 12, 0.3);
    let x = randn(5 * 8, 13, 1.0);
    let (a, _) = moe.forward(&p, &x, 1, 5);
    let (b, _) = dense.forward(&p[8..], &x, 1, 5);
    assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-12));
}

#[test]
fn unselected_experts_do_not_matter() {
    let spec = small(LayerKind::MoeMlp);
    let moe = MoeMlp::new(&spec);
    let specs = moe.params();
    let mut p = randn(total_size(&specs), 14, 0.3);
    let x = randn(8, 15, 1.0);
    let (y, _) = moe.forward(&p, &x, 1, 1);
    let logits = super::linalg::matmul(&x, &p[..8 * spec.experts], 1, 8, spec.experts);
    let chosen = super::mlp::top_k(&logits, spec.active_experts);
    let mut slots = carve_mut(&mut p, &specs);
    for e in (0..spec.experts).filter(|e| !chosen.contains(e)) {
        for s in &mut slots[1 + 3 * e..4 + 3 * e] {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let (y2, _) = moe.forward(&p, &x, 1, 1);
    assert_eq!(y, y2);
}

#[test]
fn gated_long_conv_reduces_to_gating() {
    let (b, t, c) = (2, 6, 3);
    let (x0, x1, v) = (randn(b * t * c, 1, 1.0), randn(b * t * c, 2, 1.0), randn(b * t * c, 3, 1.0));
    // No filter, unit skip: plain product of the last two streams times the first.
    let y = gated_long_conv(&x0, &x1, &v, &vec![0.0; t * c], &[1.0; 3], b, t, c);
    for i in 0..y.len() {
        assert!((y[i] - x0[i] * x1[i] * v[i]).abs() < 1e-12);
    }
    // A unit impulse filter with no skip gives the same result.
    let mut h = vec![0.0; t * c];
    h[..c].iter_mut().for_each(|v| *v = 1.0);
    let y = gated_long_conv(&x0, &x1, &v, &h, &[0.0; 3], b, t, c);
    for i in 0..y.len() {
        assert!((y[i] - x0[i] * x1[i] * v[i]).abs() < 1e-12);
    }
}

fn scan_inputs(t: usize, ch: usize, s: usize, seed: u64) -> [Vec<f64>; 5] {
    let dt: Vec<f64> = randn(t * ch, seed, 1.0).iter().map(|v| super::linalg::softplus(*v)).collect();
    let a: Vec<f64> = randn(ch * s, seed + 1, 1.0).iter().map(|v| -v.exp()).collect();
    [dt, a, randn(t * s, seed + 2, 1.0), randn(t * s, seed + 3, 1.0), randn(t * ch, seed + 4, 1.0)]
}

#[test]
fn scan_implementations_agree() {
    for (t, seed) in [(1, 1), (2, 2), (37, 3), (64, 4)] {
        let (ch, s) = (5, 4);
        let [dt, a, b, c, x] = scan_inputs(t, ch, s, seed);
        let inp = ScanInputs { dt: &dt, a: &a, b: &b, c: &c, x: &x, t, ch, s };
        let (y, _) = selective_scan(&inp);
        let naive = selective_scan_naive(&inp);
        let par = selective_scan_parallel(&inp);
        for i in 0..y.len() {
            assert!((y[i] - naive[i]).abs() <= 1e-10 * (1.0 + naive[i].abs()));
            assert!((y[i] - par[i]).abs() <= 1e-10 * (1.0 + naive[i].abs()));
        }
    }
}

#[test]
fn single_step_scan_closed_form() {
    let [dt, a, b, c, x] = scan_inputs(1, 3, 4, 9);
    let inp = ScanInputs { dt: &dt, a: &a, b: &b, c: &c, x: &x, t: 1, ch: 3, s: 4 };
    let (y, _) = selective_scan(&inp);
    for ch in 0..3 {
        let expect: f64 = (0..4).map(|k| c[k] * dt[ch] * b[k] * x[ch]).sum();
        assert!((y[ch] - expect).abs() < 1e-12);
    }
}

#[test]
fn builder_rejects_bad_specs() {
    let mut s = small(LayerKind::Gla);
    s.heads = 3;
    assert!(build(&s).is_err());
    let mut s = small(LayerKind::MoeMlp);
    s.active_experts = 9;
    assert!(build(&s).is_err());
}

fn tiny_arch(mixer: LayerKind) -> ArchitectureSpec {
    let layers = vec![small(mixer), small(LayerKind::Swiglu), small(LayerKind::Attention), small(LayerKind::MoeMlp)];
    ArchitectureSpec::new(format!("tiny-{mixer}"), 11, layers)
}

fn model_gradcheck(model: &Model, batch: &Batch, seed: u64) -> f64 {
    let mut p = model.init(seed);
    let noise = randn(p.len(), seed, 0.1);
    for (a, n) in p.iter_mut().zip(noise) {
        *a += n;
    }
    let (_, g) = model.loss_and_grad(&p, batch).unwrap();
    let loss = |p: &[f64]| model.run(p, batch, None).unwrap().mean_loss();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    // Every second entry keeps the run short while touching every slot.
    for i in (0..p.len()).step_by(2) {
        let mut q = p.clone();
        q[i] += eps;
        let hi = loss(&q);
        q[i] -= 2.0 * eps;
        let lo = loss(&q);
        worst = worst.max(rel((hi - lo) / (2.0 * eps), g[i]));
    }
    worst
}

fn toy_batch(t: usize, head: bool) -> Batch {
    let b = 2;
    let mut r = stream("checks/batch", t as u64, 0);
    use rand::Rng;
    let tokens: Vec<u32> = (0..b * t).map(|_| r.random_range(0..11)).collect();
    let targets: Vec<u32> = (0..b * t).map(|_| r.random_range(0..11)).collect();
    let mask: Vec<bool> = (0..b * t).map(|i| if head { i % t < t - 1 } else { i % 3 != 0 }).collect();
    Batch { b, t, tokens, targets, mask }
}

#[test]
fn model_gradients_match_finite_differences() {
    for kind in [LayerKind::Hyena, LayerKind::Mamba] {
        let model = Model::new(&tiny_arch(kind), false).unwrap();
        let worst = model_gradcheck(&model, &toy_batch(5, false), 21);
        assert!(worst <= 1e-5, "{kind}: {worst:e}");
    }
    let model = Model::new(&tiny_arch(LayerKind::Gla), true).unwrap();
    let worst = model_gradcheck(&model, &toy_batch(5, true), 22);
    assert!(worst <= 1e-5, "decoder head: {worst:e}");
}

#[test]
fn empty_mask_gives_zero_loss_and_gradient() {
    let model = Model::new(&tiny_arch(LayerKind::Hyena), false).unwrap();
    let p = model.init(1);
    let mut batch = toy_batch(4, false);
    batch.mask.iter_mut().for_each(|m| *m = false);
    let (loss, g) = model.loss_and_grad(&p, &batch).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn out_of_vocabulary_tokens_are_rejected() {
    let arch = tiny_arch(LayerKind::Hyena);
    let model = Model::new(&arch, false).unwrap();
    let p = model.init(1);
    assert!(matches!(model.logits(&p, &[3, 11], 1, 2), Err(crate::Error::Shape(_))));
    let logits = super::model::forward_model(&arch, &p, &[1, 2, 3]).unwrap();
    assert_eq!(logits.shape, vec![3, 11]);
}

#[test]
fn init_is_deterministic_per_seed() {
    let model = Model::new(&tiny_arch(LayerKind::Mamba), false).unwrap();
    assert_eq!(model.init(5), model.init(5));
    assert_ne!(model.init(5), model.init(6));
}
