//! Minimal differentiable-network toolkit: strided convolutions, dense layers,
//! pointwise nonlinearities, reverse-mode gradients, Adam, clipping and soft
//! target updates.

mod conv;
pub mod layer;
pub mod network;
pub mod optim;
pub mod params;
pub mod tensor;

pub use layer::{conv_trunk, Activation, LayerKind, LayerSpec};
pub use network::{Gradients, Network, Tape};
pub use optim::{adam_step, clip_global_norm, soft_update, AdamState};
pub use params::ParamSet;
pub use tensor::{Scalar, Tensor};
