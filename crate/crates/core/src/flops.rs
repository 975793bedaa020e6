//! Per-layer and per-model FLOP counts from closed-form cost formulas.
//!
//! Counts are for one sequence of `L` tokens through the forward pass and
//! are treated as the per-token cost `C` in budget arithmetic. Terms with
//! `log2 L` assume FFT convolutions and require `L` to be a power of two.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitives::model::Model;
use crate::primitives::spec::{ArchitectureSpec, LayerKind, LayerSpec};

/// Dimensions entering the cost formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopDims {
    pub l: u64,
    pub d: u64,
    pub v: u64,
    pub h: u64,
    pub n: u64,
    pub d_glu: u64,
    pub d_moe: u64,
    pub d_dt: u64,
    pub d_moh: u64,
    pub a_moe: u64,
    pub a_moh: u64,
    pub g_moe: u64,
    pub g_moh: u64,
    pub s_hyena: u64,
    pub s_mamba: u64,
    pub e: u64,
    /// Multiplier of the Mamba scan term; efficient scans reach 2.
    pub scan_constant: u64,
}

impl FlopDims {
    /// Dimensions of `layer` at sequence length `l` and vocabulary `v`.
    pub fn for_layer(layer: &LayerSpec, l: u64, v: u64) -> Self {
        let moe = layer.kind == LayerKind::MoeMlp;
        FlopDims {
            l,
            d: layer.width as u64,
            v,
            h: layer.heads as u64,
            n: 1,
            d_glu: layer.glu_inner as u64,
            d_moe: if moe { layer.expert_width as u64 } else { 0 },
            d_dt: layer.dt_rank as u64,
            d_moh: if moe { 0 } else { layer.expert_width as u64 },
            a_moe: layer.experts as u64,
            a_moh: layer.experts as u64,
            g_moe: layer.active_experts as u64,
            g_moh: layer.active_experts as u64,
            s_hyena: layer.filter_order as u64,
            s_mamba: layer.state_dim as u64,
            e: layer.expansion as u64,
            scan_constant: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopEstimate {
    pub per_component: BTreeMap<String, u64>,
    pub total: u64,
}

impl FlopEstimate {
    fn from_terms(terms: &[(&str, u64)]) -> Self {
        let per_component: BTreeMap<String, u64> = terms.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let total = per_component.values().sum();
        FlopEstimate { per_component, total }
    }

    /// Two-column table, components in name order, then the total.
    pub fn table(&self) -> String {
        let w = self.per_component.keys().map(|k| k.len()).max().unwrap_or(0).max(5);
        let mut s = String::new();
        for (k, v) in &self.per_component {
            s.push_str(&format!("{k:<w$}  {v}\n"));
        }
        s.push_str(&format!("{:<w$}  {}\n", "total", self.total));
        s
    }
}

fn log2_exact(l: u64) -> Result<u64> {
    if l == 0 || !l.is_power_of_two() {
        return Err(Error::NonPowerOfTwo(l));
    }
    Ok(l.trailing_zeros() as u64)
}

/// Cost of one layer of `kind`.
pub fn flops_layer(kind: LayerKind, x: &FlopDims) -> Result<FlopEstimate> {
    let (l, d) = (x.l, x.d);
    let terms: Vec<(&str, u64)> = match kind {
        LayerKind::Attention => vec![
            ("projections", 6 * l * d * d),
            ("attention", 4 * l * l * d + 2 * x.h * l * l),
            ("out", 2 * l * d * d),
        ],
        LayerKind::Hyena => {
            let lg = log2_exact(l)?;
            vec![
                ("projections", 6 * l * d * d),
                ("short_convs", 18 * l * d),
                ("featurization", x.s_hyena * l * d),
                ("conv_gates", 10 * l * lg * d + 4 * l * d),
                ("out", 2 * l * d * d),
            ]
        }
        LayerKind::MhHyena => {
            let lg = log2_exact(l)?;
            vec![
                ("projections", 6 * l * d * d),
                ("short_convs", 18 * l * d),
                ("featurization", x.s_hyena * l * x.h),
                ("conv_gates", (10 * l * lg * d * d + 4 * l * d * d) / x.h),
                ("out", 2 * l * d * d),
            ]
        }
        LayerKind::Mamba => vec![
            ("projections", 4 * l * d * d * x.e),
            ("short_conv", 6 * l * d * x.e),
            ("featurization", 2 * l * d * x.e * (x.d_dt + 2 * x.s_mamba) + 2 * l * d * x.e * x.d_dt),
            ("scan", x.scan_constant * l * d * x.e * x.s_mamba),
            ("out", 2 * l * d * d * x.e),
        ],
        LayerKind::Swiglu => vec![("glu", 6 * l * d * x.d_glu)],
        LayerKind::MoeMlp => vec![
            ("router", l * d * x.a_moe),
            ("up", 4 * d * x.d_moe * x.a_moe),
            ("down", 2 * d * x.d_moe * x.g_moe),
        ],
        LayerKind::HyenaExperts => {
            let lg = log2_exact(l)?;
            let active = x.d_moh * x.g_moh;
            vec![
                ("router", l * d * x.a_moh),
                ("projections", 6 * l * d * d),
                ("short_convs", 18 * l * d),
                ("featurization", x.s_hyena * l * active),
                ("conv_gates", 10 * l * lg * active + 4 * l * active),
                ("out", 2 * l * x.d_moh * d),
            ]
        }
        LayerKind::Gla => return Err(Error::NoCalculator(kind.name().into())),
    };
    Ok(FlopEstimate::from_terms(&terms))
}

/// Embedding term plus every layer, keyed `embedding` and `layer{i}.{term}`.
pub fn flops_model(arch: &ArchitectureSpec, l: u64, scan_constant: u64) -> Result<FlopEstimate> {
    let (d, v) = (arch.width as u64, arch.vocab_size as u64);
    let mut per_component = BTreeMap::new();
    per_component.insert("embedding".to_string(), 4 * l * d * v);
    for (i, layer) in arch.layers.iter().enumerate() {
        let dims = FlopDims { scan_constant, ..FlopDims::for_layer(layer, l, v) };
        let est = flops_layer(layer.kind, &dims)?;
        for (k, c) in est.per_component {
            per_component.insert(format!("layer{i:02}.{k}"), c);
        }
    }
    let total = per_component.values().sum();
    Ok(FlopEstimate { per_component, total })
}

pub const TRAIN_MULTIPLIER: u64 = 3;

/// Training cost: `multiplier x C x tokens` (one forward and two backward
/// passes' worth by default).
pub fn flops_training(arch: &ArchitectureSpec, l: u64, tokens: u64, multiplier: u64) -> Result<u128> {
    if tokens == 0 {
        return Err(Error::config("token count must be at least 1"));
    }
    let c = flops_model(arch, l, 2)?.total;
    Ok(multiplier as u128 * c as u128 * tokens as u128)
}

/// Parameter count of the model, tied embeddings counted once.
pub fn param_count(arch: &ArchitectureSpec) -> Result<u64> {
    Ok(Model::new(arch, false)?.param_count() as u64)
}

/// A Transformer++ stack of `n` (attention, SwiGLU) pairs.
pub fn transformer_pp(width: usize, heads: usize, glu_inner: usize, n: usize, vocab: usize) -> ArchitectureSpec {
    let mut layers = Vec::new();
    for _ in 0..n {
        layers.push(LayerSpec::attention(width).with_heads(heads));
        layers.push(LayerSpec { glu_inner, ..LayerSpec::swiglu(width) });
    }
    ArchitectureSpec::new(format!("transformer_pp_{width}x{n}"), vocab, layers)
}
