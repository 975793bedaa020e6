//! Layer and architecture descriptions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Attention,
    Hyena,
    MhHyena,
    Gla,
    Mamba,
    Swiglu,
    MoeMlp,
    HyenaExperts,
}

impl LayerKind {
    pub const ALL: [LayerKind; 8] = [
        LayerKind::Attention,
        LayerKind::Hyena,
        LayerKind::MhHyena,
        LayerKind::Gla,
        LayerKind::Mamba,
        LayerKind::Swiglu,
        LayerKind::MoeMlp,
        LayerKind::HyenaExperts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Attention => "attention",
            LayerKind::Hyena => "hyena",
            LayerKind::MhHyena => "mh_hyena",
            LayerKind::Gla => "gla",
            LayerKind::Mamba => "mamba",
            LayerKind::Swiglu => "swiglu",
            LayerKind::MoeMlp => "moe_mlp",
            LayerKind::HyenaExperts => "hyena_experts",
        }
    }

    /// Whether the layer mixes along the sequence.
    pub fn is_sequence_mixer(self) -> bool {
        !matches!(self, LayerKind::Swiglu | LayerKind::MoeMlp)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown layer kind `{s}`")))
    }
}

/// Hyperparameters of one layer. Fields a kind does not use are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub width: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Width of the implicit filter network (`S_hyena`).
    pub filter_order: usize,
    /// Length of the short depthwise convolutions (Hyena family and Mamba).
    pub short_filter_len: usize,
    /// State assigned to each Hyena channel's long filter.
    pub filter_state_dim: usize,
    /// State assigned to each multi-head Hyena head per head-channel.
    pub head_state: usize,
    /// Mamba state size per channel (`S_mamba`).
    pub state_dim: usize,
    /// Mamba width expansion (`E`).
    pub expansion: usize,
    /// Mamba step-size bottleneck (`D_dt`).
    pub dt_rank: usize,
    /// Rank of the GLA gate projection.
    pub gate_rank: usize,
    pub experts: usize,
    pub active_experts: usize,
    pub expert_width: usize,
    /// SwiGLU inner width (`D_glu`).
    pub glu_inner: usize,
    /// RMS pre-norm before the layer.
    pub norm: bool,
}

impl LayerSpec {
    fn base(kind: LayerKind, width: usize) -> Self {
        LayerSpec {
            kind,
            width,
            heads: 1,
            head_dim: width,
            filter_order: 2,
            short_filter_len: 3,
            filter_state_dim: 16,
            head_state: 2,
            state_dim: 4,
            expansion: 2,
            dt_rank: width.div_ceil(16),
            gate_rank: (width / 16).max(1),
            experts: 8,
            active_experts: 2,
            expert_width: 16,
            glu_inner: 4 * width,
            norm: true,
        }
    }

    /// Multi-head attention with heads of width 8.
    pub fn attention(width: usize) -> Self {
        Self::base(LayerKind::Attention, width).with_heads((width / 8).max(1))
    }

    pub fn hyena(width: usize) -> Self {
        Self::base(LayerKind::Hyena, width)
    }

    /// Multi-head Hyena with heads of width 8.
    pub fn mh_hyena(width: usize) -> Self {
        Self::base(LayerKind::MhHyena, width).with_heads((width / 8).max(1))
    }

    /// Gated linear attention with heads of width 16.
    pub fn gla(width: usize) -> Self {
        Self::base(LayerKind::Gla, width).with_heads((width / 16).max(1))
    }

    pub fn mamba(width: usize) -> Self {
        LayerSpec { short_filter_len: 4, ..Self::base(LayerKind::Mamba, width) }
    }

    pub fn swiglu(width: usize) -> Self {
        Self::base(LayerKind::Swiglu, width)
    }

    pub fn moe_mlp(width: usize) -> Self {
        Self::base(LayerKind::MoeMlp, width)
    }

    /// Hyena experts whose widths add up to the layer width.
    pub fn hyena_experts(width: usize) -> Self {
        let mut s = Self::base(LayerKind::HyenaExperts, width);
        s.expert_width = (width / s.experts).max(1);
        s
    }

    pub fn new(kind: LayerKind, width: usize) -> Self {
        match kind {
            LayerKind::Attention => Self::attention(width),
            LayerKind::Hyena => Self::hyena(width),
            LayerKind::MhHyena => Self::mh_hyena(width),
            LayerKind::Gla => Self::gla(width),
            LayerKind::Mamba => Self::mamba(width),
            LayerKind::Swiglu => Self::swiglu(width),
            LayerKind::MoeMlp => Self::moe_mlp(width),
            LayerKind::HyenaExperts => Self::hyena_experts(width),
        }
    }

    /// Sets the head count and derives the head width from the layer width.
    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self.head_dim = self.width.checked_div(heads).unwrap_or(0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::config(format!("{} layer: {m}", self.kind)));
        if self.width == 0 {
            return err("width must be positive".into());
        }
        match self.kind {
            LayerKind::Attention | LayerKind::MhHyena | LayerKind::Gla
                if (self.heads == 0 || self.heads * self.head_dim != self.width) => {
                    return err(format!(
                        "heads ({}) x head_dim ({}) must equal width ({})",
                        self.heads, self.head_dim, self.width
                    ));
                }
            _ => {}
        }
        let positive: &[(&str, usize)] = match self.kind {
            LayerKind::Hyena => &[("filter_order", self.filter_order), ("short_filter_len", self.short_filter_len)],
            LayerKind::MhHyena => &[
                ("filter_order", self.filter_order),
                ("short_filter_len", self.short_filter_len),
                ("head_state", self.head_state),
            ],
            LayerKind::Gla => &[("gate_rank", self.gate_rank)],
            LayerKind::Mamba => &[
                ("state_dim", self.state_dim),
                ("expansion", self.expansion),
                ("dt_rank", self.dt_rank),
                ("short_filter_len", self.short_filter_len),
            ],
            LayerKind::Swiglu => &[("glu_inner", self.glu_inner)],
            LayerKind::MoeMlp | LayerKind::HyenaExperts => &[
                ("experts", self.experts),
                ("active_experts", self.active_experts),
                ("expert_width", self.expert_width),
                ("filter_order", self.filter_order),
                ("short_filter_len", self.short_filter_len),
            ],
            LayerKind::Attention => &[],
        };
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return err(format!("{name} must be positive"));
        }
        if matches!(self.kind, LayerKind::MoeMlp | LayerKind::HyenaExperts) && self.active_experts > self.experts {
            return err(format!(
                "active experts ({}) exceed experts ({})",
                self.active_experts, self.experts
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    Rotary,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    pub vocab_size: usize,
    pub width: usize,
    pub layers: Vec<LayerSpec>,
    pub tie_embeddings: bool,
    pub positional: Positional,
}

impl ArchitectureSpec {
    pub fn new(name: impl Into<String>, vocab_size: usize, layers: Vec<LayerSpec>) -> Self {
        let width = layers.first().map_or(0, |l| l.width);
        ArchitectureSpec {
            name: name.into(),
            vocab_size,
            width,
            layers,
            tie_embeddings: true,
            positional: Positional::Rotary,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.width == 0 || self.layers.is_empty() {
            return Err(Error::config(format!("architecture `{}` needs a vocabulary, width and layers", self.name)));
        }
        if !self.tie_embeddings {
            return Err(Error::config("untied embeddings are not supported"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.width != self.width {
                return Err(Error::config(format!("layer {i} width {} differs from model width {}", l.width, self.width)));
            }
            l.validate()?;
        }
        Ok(())
    }

    pub fn with_vocab(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    /// Stable identifier: first 16 hex digits of the SHA-256 of the JSON form.
    pub fn id(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("architecture serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}
