//! The common interface of all mixing layers.

use std::any::Any;

use super::params::{carve, total_size, ParamSpec};
use super::spec::{LayerKind, LayerSpec};
use super::tensor::Tensor;
use super::{attention, gla, hyena, mamba, mlp};
use crate::error::{Error, Result};

/// Saved activations of one forward pass.
pub type Cache = Box<dyn Any + Send + Sync>;

/// A mixing layer acting on `(B, T, D)` activations stored row-major as
/// `(B * T, D)`. Parameters arrive as one slice laid out per [`Mixer::params`].
pub trait Mixer: Send + Sync {
    fn params(&self) -> Vec<ParamSpec>;

    fn forward(&self, p: &[f64], x: &[f64], b: usize, t: usize) -> (Vec<f64>, Cache);

    /// Accumulates parameter gradients into `dp` and returns the input gradient.
    fn backward(&self, p: &[f64], cache: &Cache, dy: &[f64], dp: &mut [f64]) -> Vec<f64>;
}

pub fn build(spec: &LayerSpec) -> Result<Box<dyn Mixer>> {
    spec.validate()?;
    Ok(match spec.kind {
        LayerKind::Attention => Box::new(attention::Attention::new(spec)),
        LayerKind::Hyena => Box::new(hyena::Hyena::new(spec)),
        LayerKind::MhHyena => Box::new(hyena::MhHyena::new(spec)),
        LayerKind::HyenaExperts => Box::new(hyena::HyenaExperts::new(spec)),
        LayerKind::Gla => Box::new(gla::Gla::new(spec)),
        LayerKind::Mamba => Box::new(mamba::Mamba::new(spec)),
        LayerKind::Swiglu => Box::new(mlp::Swiglu::new(spec.width, spec.glu_inner)),
        LayerKind::MoeMlp => Box::new(mlp::MoeMlp::new(spec)),
    })
}

/// A layer together with its spec, usable as a standalone operation.
pub struct Layer {
    pub spec: LayerSpec,
    pub mixer: Box<dyn Mixer>,
}

impl Layer {
    pub fn new(spec: &LayerSpec) -> Result<Self> {
        Ok(Layer { spec: spec.clone(), mixer: build(spec)? })
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.mixer.params()
    }

    pub fn param_count(&self) -> usize {
        total_size(&self.mixer.params())
    }

    pub fn init(&self, rng: &mut crate::rng::StreamRng) -> Vec<f64> {
        let specs = self.mixer.params();
        let mut p = vec![0.0; total_size(&specs)];
        let mut off = 0;
        for s in &specs {
            s.fill(rng, &mut p[off..off + s.size()]);
            off += s.size();
        }
        p
    }

    /// Named views of a parameter vector.
    pub fn named<'a>(&self, p: &'a [f64]) -> Vec<(String, &'a [f64])> {
        let specs = self.mixer.params();
        specs.iter().map(|s| s.name.clone()).zip(carve(p, &specs)).collect()
    }

    /// Applies the layer to a `(T, D)` or `(B, T, D)` input.
    pub fn apply(&self, params: &[f64], u: &Tensor) -> Result<Tensor> {
        let (b, t, d) = u.btd()?;
        if d != self.spec.width {
            return Err(Error::shape(format!("input width {d} != layer width {}", self.spec.width)));
        }
        if params.len() != self.param_count() {
            return Err(Error::shape(format!("expected {} parameters, got {}", self.param_count(), params.len())));
        }
        let (y, _) = self.mixer.forward(params, &u.data, b, t);
        let out = Tensor::new(u.shape.clone(), y)?;
        out.check_finite(self.spec.kind.name())?;
        Ok(out)
    }
}
