//! Sequence-mixing and channel-mixing layers, their shared kernels, and the
//! models assembled from them.

pub mod attention;
pub mod conv;
pub mod gla;
pub mod hyena;
pub mod layer;
pub mod linalg;
pub mod mamba;
pub mod mlp;
pub mod model;
pub mod params;
pub mod presets;
pub mod recurrence;
pub mod spec;
pub mod tensor;

pub use conv::{causal_conv, ConvPath, LongConv};
pub use layer::{Layer, Mixer};
pub use model::{backward_model, forward_model, Batch, Model, Stats};
pub use params::{Init, ParamSpec};
pub use recurrence::{headed_state_update, linear_attention, Mode};
pub use spec::{ArchitectureSpec, LayerKind, LayerSpec, Positional};
pub use tensor::Tensor;

#[cfg(test)]
mod checks;
