//! Dual-network actor-critic training: decoupled TD(λ) return estimation,
//! three-phase PPO with constrained distillation, gradient noise-scale
//! probes, toy control environments and an experiment harness.

pub mod env;
pub mod error;
pub mod experiments;
pub mod nn;
pub mod noise;
pub mod objectives;
pub mod returns;
pub mod trainer;

pub use error::{Error, Result};
