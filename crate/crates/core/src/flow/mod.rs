//! Invertible layers and the flow model.

mod affine;
mod autoregressive;
mod base;
mod coupling;
mod lu;
mod model;

pub use affine::AffineCoupling;
pub use autoregressive::AutoregressiveSpline;
pub use base::BaseDistribution;
pub use coupling::SplineCoupling;
pub use lu::LuLinear;
pub use model::{FlowMode, FlowModel, Layer, LayerInfo, ModelConfig, TransformKind};
