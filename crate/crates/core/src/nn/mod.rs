//! Minimal dense neural-network engine.
//!
//! All arithmetic is `f64`. Parameters live in a flat [`ParameterSet`] whose
//! [`Layout`] lists, per layer, a row-major weight block followed by a bias
//! block.

mod mlp;
mod optim;
mod params;
mod train;

pub use mlp::{
    bce_loss, clip_gradient, sigmoid, DropoutMask, Example, Gradient, MlpModel, Pass, DEFAULT_DIMS,
    PROB_CLAMP,
};
pub use optim::{AdamState, Optimizer, OptimizerKind, DEFAULT_LEARNING_RATE};
pub use params::{Layout, ParamBlock, ParamKind, ParameterSet};
pub use train::train_epoch;

pub(crate) use params::{read_u32, read_u64};
