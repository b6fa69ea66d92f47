//! Feedforward networks with analytic backpropagation, categorical policy
//! utilities and Adam.

pub mod categorical;
pub mod mlp;
pub mod optim;

pub use categorical::{entropy, kl_categorical, sample_action, CategoricalPolicy};
pub use mlp::{Activation, ForwardCache, HeadSpec, InitScheme, Mlp, NetSpec};
pub use optim::{adam_step, clip_global_grad_norm, AdamConfig, AdamState, ParamSnapshot, ParameterBlock};
