//! Fixed and dynamic state sizes of layers and models, and iso-state
//! normalization.
//!
//! Fixed state per layer:
//! - Hyena: channels x `filter_state_dim`
//! - Hyena experts: (experts x expert width) x `filter_state_dim`
//! - multi-head Hyena: heads x `head_state` x head_dim^2
//! - GLA: heads x head_dim^2
//! - Mamba: (expansion x width) x `state_dim`
//! - attention and channel mixers: 0
//!
//! Attention keeps keys and values for every past token instead: `2 D` per
//! token of dynamic state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitives::spec::{ArchitectureSpec, LayerKind, LayerSpec};

/// Total fixed state of the MAD baseline models.
pub const ISO_STATE_TARGET: u64 = 4096;
/// Total fixed state of the desk-width models.
pub const DESK_STATE_TARGET: u64 = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerState {
    pub layer: usize,
    pub kind: LayerKind,
    pub fixed_state: u64,
    pub dynamic_per_token: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateProfile {
    pub per_layer: Vec<LayerState>,
    pub total_fixed: u64,
    pub dynamic_per_token: u64,
}

impl StateProfile {
    fn from_layers(per_layer: Vec<LayerState>) -> Self {
        let total_fixed = per_layer.iter().map(|l| l.fixed_state).sum();
        let dynamic_per_token = per_layer.iter().map(|l| l.dynamic_per_token).sum();
        StateProfile { per_layer, total_fixed, dynamic_per_token }
    }

    /// Dynamic state after `t` tokens.
    pub fn total_dynamic(&self, t: u64) -> u64 {
        self.dynamic_per_token * t
    }

    /// CSV with columns `layer, kind, fixed_state, dynamic_per_token`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "kind", "fixed_state", "dynamic_per_token"])?;
        for l in &self.per_layer {
            w.write_record([l.layer.to_string(), l.kind.to_string(), l.fixed_state.to_string(), l.dynamic_per_token.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn layer_fixed_state(l: &LayerSpec) -> u64 {
    let (d, m) = (l.width as u64, l.head_dim as u64);
    match l.kind {
        LayerKind::Hyena => d * l.filter_state_dim as u64,
        LayerKind::HyenaExperts => (l.experts * l.expert_width * l.filter_state_dim) as u64,
        LayerKind::MhHyena => l.heads as u64 * l.head_state as u64 * m * m,
        LayerKind::Gla => l.heads as u64 * m * m,
        LayerKind::Mamba => (l.expansion * l.width * l.state_dim) as u64,
        LayerKind::Attention | LayerKind::Swiglu | LayerKind::MoeMlp => 0,
    }
}

pub fn layer_dynamic_per_token(l: &LayerSpec) -> u64 {
    match l.kind {
        LayerKind::Attention => 2 * l.width as u64,
        _ => 0,
    }
}

pub fn fixed_state_profile(arch: &ArchitectureSpec) -> StateProfile {
    profile(arch)
}

/// Profile whose dynamic part is evaluated at sequence length `t`: each
/// attention layer holds `2 T D` entries.
pub fn dynamic_state_profile(arch: &ArchitectureSpec, t: u64) -> Result<(StateProfile, u64)> {
    if t == 0 {
        return Err(Error::config("sequence length must be at least 1"));
    }
    let p = profile(arch);
    let total = p.total_dynamic(t);
    Ok((p, total))
}

fn profile(arch: &ArchitectureSpec) -> StateProfile {
    StateProfile::from_layers(
        arch.layers
            .iter()
            .enumerate()
            .map(|(i, l)| LayerState {
                layer: i,
                kind: l.kind,
                fixed_state: layer_fixed_state(l),
                dynamic_per_token: layer_dynamic_per_token(l),
            })
            .collect(),
    )
}

/// The state-dimension knob of a layer, if it has fixed state.
fn state_knob(l: &LayerSpec) -> Option<usize> {
    match l.kind {
        LayerKind::Hyena | LayerKind::HyenaExperts => Some(l.filter_state_dim),
        LayerKind::MhHyena => Some(l.head_state),
        LayerKind::Gla => Some(l.head_dim),
        LayerKind::Mamba => Some(l.state_dim),
        _ => None,
    }
}

/// Sets the state knob; `None` when the value is not realizable.
fn with_state_knob(l: &LayerSpec, v: usize) -> Option<LayerSpec> {
    if v == 0 {
        return None;
    }
    let mut out = l.clone();
    match l.kind {
        LayerKind::Hyena | LayerKind::HyenaExperts => out.filter_state_dim = v,
        LayerKind::MhHyena => out.head_state = v,
        LayerKind::Gla => {
            if !l.width.is_multiple_of(v) {
                return None;
            }
            out = out.with_heads(l.width / v);
        }
        LayerKind::Mamba => out.state_dim = v,
        _ => return None,
    }
    Some(out)
}

/// Shape variants tried once the state knobs alone cannot reach the target:
/// smaller Mamba expansions, then other multi-head Hyena head counts.
fn shape_variants(arch: &ArchitectureSpec) -> Vec<ArchitectureSpec> {
    let mut out = vec![arch.clone()];
    let max_e = arch.layers.iter().filter(|l| l.kind == LayerKind::Mamba).map(|l| l.expansion).max();
    if let Some(e) = max_e {
        for e2 in (1..e).rev() {
            let mut a = arch.clone();
            a.layers.iter_mut().filter(|l| l.kind == LayerKind::Mamba).for_each(|l| l.expansion = e2);
            out.push(a);
        }
    }
    if let Some(l) = arch.layers.iter().find(|l| l.kind == LayerKind::MhHyena) {
        let mut heads: Vec<usize> = (1..=l.width).filter(|h| l.width % h == 0 && *h != l.heads).collect();
        heads.sort_by_key(|&h| (h.abs_diff(l.heads), h));
        for h in heads {
            let mut a = arch.clone();
            a.layers.iter_mut().filter(|l| l.kind == LayerKind::MhHyena).for_each(|l| *l = l.clone().with_heads(h));
            out.push(a);
        }
    }
    out
}

/// Rescales every state knob by `target / total`; `Err(nearest)` when some
/// knob would not be a valid integer.
fn rescale(arch: &ArchitectureSpec, target: u64) -> std::result::Result<ArchitectureSpec, u64> {
    let total = profile(arch).total_fixed;
    if total == 0 {
        return Err(0);
    }
    let mut out = arch.clone();
    let mut exact = true;
    for l in out.layers.iter_mut() {
        let Some(k) = state_knob(l) else { continue };
        let num = k as u128 * target as u128;
        let v = (num as f64 / total as f64).round().max(1.0) as usize;
        if !num.is_multiple_of(total as u128) {
            exact = false;
        }
        match with_state_knob(l, v) {
            Some(n) => *l = n,
            None => exact = false,
        }
    }
    if exact {
        Ok(out)
    } else {
        Err(profile(&out).total_fixed)
    }
}

/// Adjusts state knobs so the total fixed state equals `target`, reducing
/// state dimensions first and touching layer shape only when needed.
pub fn normalize_iso_state(arch: &ArchitectureSpec, target: u64) -> Result<ArchitectureSpec> {
    if profile(arch).total_fixed == target {
        return Ok(arch.clone());
    }
    let mut nearest = None::<u64>;
    for variant in shape_variants(arch) {
        match rescale(&variant, target) {
            Ok(a) => {
                a.validate()?;
                return Ok(a);
            }
            Err(n) => {
                if nearest.is_none_or(|b| n.abs_diff(target) < b.abs_diff(target)) {
                    nearest = Some(n);
                }
            }
        }
    }
    Err(Error::IsoStateUnreachable { target, nearest: nearest.unwrap_or(0) })
}
