//! Named architectures: two-block MAD models and their striped hybrids.

use super::spec::{ArchitectureSpec, LayerKind, LayerSpec};
use crate::error::{Error, Result};

/// Width of the MAD baseline models.
pub const MAD_WIDTH: usize = 128;
/// Width used by the reduced desk preset.
pub const DESK_WIDTH: usize = 64;

pub const ROSTER: [&str; 13] = [
    "transformer",
    "hyena",
    "mh_hyena",
    "gla",
    "mamba",
    "hyena_experts",
    "striped_hyena",
    "striped_mh_hyena",
    "striped_gla",
    "striped_mamba",
    "striped_hyena_experts",
    "transformer_moe",
    "striped_hyena_moe",
];

/// The sequence-mixer kind a single-primitive model uses.
fn mixer_of(base: &str) -> Option<LayerKind> {
    Some(match base {
        "transformer" => LayerKind::Attention,
        "hyena" => LayerKind::Hyena,
        "mh_hyena" => LayerKind::MhHyena,
        "gla" => LayerKind::Gla,
        "mamba" => LayerKind::Mamba,
        "hyena_experts" => LayerKind::HyenaExperts,
        _ => return None,
    })
}

/// Builds the named architecture at `width` for a `vocab`-token task.
///
/// Two blocks of (sequence mixer, channel mixer); striped variants swap the
/// second block's mixer for attention. Mamba models replace the channel
/// mixers with further Mamba layers.
pub fn preset(name: &str, width: usize, vocab: usize) -> Result<ArchitectureSpec> {
    let (striped, rest) = match name.strip_prefix("striped_") {
        Some(r) => (true, r),
        None => (false, name),
    };
    let (moe, base) = match rest.strip_suffix("_moe") {
        Some(b) => (true, b),
        None => (false, rest),
    };
    let kind = mixer_of(base).ok_or_else(|| Error::config(format!("unknown architecture `{name}`")))?;
    if striped && kind == LayerKind::Attention {
        return Err(Error::config(format!("unknown architecture `{name}`")));
    }
    let channel = || if moe { LayerSpec::moe_mlp(width) } else { LayerSpec::swiglu(width) };
    let mixer = LayerSpec::new(kind, width);
    let layers = match (kind, striped) {
        (LayerKind::Mamba, false) => vec![mixer.clone(), mixer.clone(), mixer.clone(), mixer],
        (LayerKind::Mamba, true) => vec![mixer.clone(), mixer, LayerSpec::attention(width), channel()],
        (_, false) => vec![mixer.clone(), channel(), mixer, channel()],
        (_, true) => vec![mixer, channel(), LayerSpec::attention(width), channel()],
    };
    let arch = ArchitectureSpec::new(name, vocab, layers);
    arch.validate()?;
    Ok(arch)
}

/// Single-primitive models without attention.
pub fn recurrent_baselines() -> Vec<&'static str> {
    ROSTER.iter().copied().filter(|n| !n.starts_with("striped") && !n.starts_with("transformer")).collect()
}
