//! Trainer configuration. Loaded from TOML; every field has a default so a
//! config file only needs to name what it overrides.

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::nn::{Activation, InitScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Separate policy and value networks, three training phases.
    DnaDual,
    /// One network with shared trunk and policy/value heads, one combined loss.
    PpoJoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init: InitScheme,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            init: InitScheme::Orthogonal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub b_small: usize,
    /// Capped at the rollout size at run time.
    pub b_big: usize,
    pub ema_decay: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            b_small: 16,
            b_big: 16384,
            ema_decay: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnaConfig {
    pub mode: Mode,
    pub seed: u64,
    pub total_interactions: u64,
    pub gamma: f64,
    pub lambda_pi: f64,
    pub lambda_v: f64,
    pub epsilon: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    /// Linearly anneal learning rate and entropy bonus from 1 to 0 over training.
    pub anneal: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub horizon: usize,
    pub agents: usize,
    pub e_pi: usize,
    pub e_v: usize,
    pub e_d: usize,
    pub beta: f64,
    pub mb_policy: usize,
    pub mb_value: usize,
    pub mb_distil: usize,
    pub grad_clip: f64,
    /// Weight of the value loss in `ppo_joint` mode.
    pub value_coef: f64,
    /// Write a checkpoint every K iterations; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub eval_episodes: usize,
    pub env: EnvConfig,
    pub network: NetworkConfig,
    pub noise: NoiseConfig,
}

impl Default for DnaConfig {
    fn default() -> Self {
        Self {
            mode: Mode::DnaDual,
            seed: 0,
            total_interactions: 200 * 128 * 128,
            gamma: 0.999,
            lambda_pi: 0.8,
            lambda_v: 0.95,
            epsilon: 0.2,
            entropy_coef: 0.001,
            lr: 2.5e-4,
            anneal: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            horizon: 128,
            agents: 128,
            e_pi: 2,
            e_v: 1,
            e_d: 2,
            beta: 1.0,
            mb_policy: 2048,
            mb_value: 512,
            mb_distil: 512,
            grad_clip: 5.0,
            value_coef: 0.5,
            checkpoint_every: 0,
            eval_episodes: 100,
            env: EnvConfig::default(),
            network: NetworkConfig::default(),
            noise: NoiseConfig::default(),
        }
    }
}

impl DnaConfig {
    /// Coarse-search values before epoch and λ fine-tuning.
    pub fn coarse() -> Self {
        Self {
            e_v: 2,
            lambda_pi: 0.95,
            ..Self::default()
        }
    }

    /// Joint-network PPO with the tuned DNA-scale settings.
    pub fn ppo() -> Self {
        Self {
            mode: Mode::PpoJoint,
            lambda_pi: 0.95,
            lambda_v: 0.95,
            e_d: 0,
            ..Self::default()
        }
    }

    /// Joint-network PPO with the original Atari settings.
    pub fn ppo_original() -> Self {
        Self {
            mode: Mode::PpoJoint,
            agents: 8,
            epsilon: 0.1,
            gamma: 0.99,
            lambda_pi: 0.95,
            lambda_v: 0.95,
            e_pi: 3,
            e_d: 0,
            mb_policy: 256,
            anneal: true,
            ..Self::default()
        }
    }

    /// Desk-scale settings for the bundled 5×5 gridworld.
    pub fn gridworld_desk() -> Self {
        Self {
            total_interactions: 200_000,
            gamma: 0.95,
            lr: 1e-3,
            entropy_coef: 0.01,
            horizon: 128,
            agents: 8,
            mb_policy: 256,
            mb_value: 64,
            mb_distil: 64,
            env: EnvConfig {
                kind: EnvKind::Gridworld,
                grid_size: 5,
                ..EnvConfig::default()
            },
            noise: NoiseConfig {
                b_big: 1024,
                ..NoiseConfig::default()
            },
            ..Self::default()
        }
    }

    /// Desk-scale settings for cart-pole.
    pub fn cartpole_desk() -> Self {
        Self {
            total_interactions: 500_000,
            gamma: 0.99,
            lr: 1e-3,
            horizon: 128,
            agents: 8,
            mb_policy: 256,
            mb_value: 64,
            mb_distil: 64,
            env: EnvConfig {
                kind: EnvKind::Cartpole,
                ..EnvConfig::default()
            },
            noise: NoiseConfig {
                b_big: 1024,
                ..NoiseConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "dna" => Self::default(),
            "coarse" => Self::coarse(),
            "ppo" => Self::ppo(),
            "ppo_original" => Self::ppo_original(),
            "gridworld" => Self::gridworld_desk(),
            "cartpole" => Self::cartpole_desk(),
            other => return Err(Error::config("preset", format!("unknown preset `{other}`"))),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.agents * self.horizon
    }

    /// Outer iterations that fit in the interaction budget. A trailing
    /// remainder smaller than one rollout is not spent.
    pub fn iterations(&self) -> usize {
        (self.total_interactions / self.batch_size() as u64) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(name, format!("{v} not in [0, 1]")))
            }
        };
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", format!("{} not in [0, 1)", self.gamma)));
        }
        unit("lambda_pi", self.lambda_pi)?;
        unit("lambda_v", self.lambda_v)?;
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be > 0"));
        }
        if !(self.entropy_coef >= 0.0) {
            return Err(Error::config("entropy_coef", "must be >= 0"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be > 0"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::config("beta", "must be >= 0"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("grad_clip", "must be > 0"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be positive"));
        }
        if self.agents == 0 {
            return Err(Error::config("agents", "must be positive"));
        }
        if self.total_interactions == 0 {
            return Err(Error::config("total_interactions", "must be positive"));
        }
        let n = self.batch_size();
        if self.total_interactions < n as u64 {
            return Err(Error::config(
                "total_interactions",
                format!("must cover at least one rollout of {n} (agents x horizon)"),
            ));
        }
        for (name, mb) in [
            ("mb_policy", self.mb_policy),
            ("mb_value", self.mb_value),
            ("mb_distil", self.mb_distil),
        ] {
            if mb == 0 || mb > n {
                return Err(Error::config(
                    name,
                    format!("mini-batch size {mb} must lie in 1..={n} (agents x horizon)"),
                ));
            }
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(Error::config("network.hidden", "need at least one positive width"));
        }
        if self.noise.enabled {
            if self.noise.b_small == 0 || self.noise.b_small >= self.noise.b_big.min(n) {
                return Err(Error::config(
                    "noise.b_small",
                    "must be positive and below min(noise.b_big, agents x horizon)",
                ));
            }
            if !(self.noise.ema_decay > 0.0 && self.noise.ema_decay < 1.0) {
                return Err(Error::config("noise.ema_decay", "must lie in (0, 1)"));
            }
        }
        self.env.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: DnaConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .unwrap_or("<config>")
                .to_string();
            Error::config(field, e.to_string().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
