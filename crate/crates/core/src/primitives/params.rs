//! Parameter layout and initialization.
//!
//! A model's parameters live in one flat `Vec<f64>`; each layer declares an
//! ordered list of named slots and receives the matching contiguous range.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{truncated_normal, StreamRng};

/// Standard deviation of the truncated normal used for projections.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Normal truncated at two standard deviations.
    Normal(f64),
    Uniform(f64, f64),
    Const(f64),
    /// `ln(1..=S)` repeated per row, for a `(rows, S)` slot.
    LogRange,
    /// Inverse softplus of a step size drawn log-uniformly from `[lo, hi]`.
    InvSoftplusLogUniform(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Whether weight decay applies.
    pub decay: bool,
    pub init: Init,
}

impl ParamSpec {
    pub fn matrix(name: &str, rows: usize, cols: usize) -> Self {
        ParamSpec { name: name.into(), shape: vec![rows, cols], decay: true, init: Init::Normal(INIT_STD) }
    }

    pub fn vector(name: &str, n: usize, init: Init) -> Self {
        ParamSpec { name: name.into(), shape: vec![n], decay: false, init }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn no_decay(mut self) -> Self {
        self.decay = false;
        self
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn fill(&self, rng: &mut StreamRng, out: &mut [f64]) {
        match self.init {
            Init::Normal(std) => out.iter_mut().for_each(|v| *v = truncated_normal(rng, std)),
            Init::Uniform(a, b) => out.iter_mut().for_each(|v| *v = a + (b - a) * rng.random::<f64>()),
            Init::Const(c) => out.iter_mut().for_each(|v| *v = c),
            Init::LogRange => {
                let s = *self.shape.last().unwrap_or(&1);
                for (i, v) in out.iter_mut().enumerate() {
                    *v = ((i % s + 1) as f64).ln();
                }
            }
            Init::InvSoftplusLogUniform(lo, hi) => {
                for v in out.iter_mut() {
                    let dt = (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp();
                    *v = dt + (-(-dt).exp_m1()).ln();
                }
            }
        }
    }
}

pub fn total_size(specs: &[ParamSpec]) -> usize {
    specs.iter().map(ParamSpec::size).sum()
}

/// Splits `p` into one slice per slot.
pub fn carve<'a>(mut p: &'a [f64], specs: &[ParamSpec]) -> Vec<&'a [f64]> {
    specs
        .iter()
        .map(|s| {
            let (a, b) = p.split_at(s.size());
            p = b;
            a
        })
        .collect()
}

pub fn carve_mut<'a>(mut p: &'a mut [f64], specs: &[ParamSpec]) -> Vec<&'a mut [f64]> {
    specs
        .iter()
        .map(|s| {
            let (a, b) = std::mem::take(&mut p).split_at_mut(s.size());
            p = b;
            a
        })
        .collect()
}
