use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::normalize::{ObsNormalizer, RewardNormalizer, REWARD_CLIP};
use super::wrappers::{apply_repeat_penalty, Env, EnvKind, EpisodeStats, RepeatPenalty, WrappedEnv};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub grid_size: usize,
    /// Episode timeout; the environment's own default when absent.
    pub timeout: Option<usize>,
    pub sticky_p: f64,
    pub repeat_threshold: u64,
    pub repeat_penalty: f64,
    pub warmup: bool,
    /// Upper bound of the uniform warmup length; `min(1000, 2 * timeout)` when absent.
    pub warmup_max: Option<usize>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            kind: EnvKind::Cartpole,
            grid_size: 5,
            timeout: None,
            sticky_p: 0.0,
            repeat_threshold: 100,
            repeat_penalty: 0.25,
            warmup: true,
            warmup_max: None,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        Env::new(self.kind, self.grid_size)?;
        if self.timeout == Some(0) {
            return Err(Error::config("env.timeout", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.sticky_p) {
            return Err(Error::config("env.sticky_p", "must lie in [0, 1]"));
        }
        if self.warmup_max == Some(0) {
            return Err(Error::config("env.warmup_max", "must be positive"));
        }
        Ok(())
    }

    pub fn build_env(&self) -> Result<Env> {
        Env::new(self.kind, self.grid_size)
    }

    pub fn resolved_timeout(&self) -> Result<usize> {
        Ok(self.timeout.unwrap_or(self.build_env()?.default_timeout()))
    }

    pub fn resolved_warmup_max(&self) -> Result<usize> {
        Ok(self
            .warmup_max
            .unwrap_or_else(|| 1000.min(2 * self.resolved_timeout().unwrap_or(500))))
    }

    pub fn repeat(&self) -> RepeatPenalty {
        RepeatPenalty {
            threshold: self.repeat_threshold,
            penalty: self.repeat_penalty,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VecStep {
    pub rewards: Vec<f64>,
    pub raw_rewards: Vec<f64>,
    pub terminals: Vec<bool>,
    pub executed_actions: Vec<usize>,
    pub episodes: Vec<EpisodeStats>,
}

/// `A` wrapped environments stepped in index order, sharing one observation
/// normalizer and one reward normalizer.
#[derive(Debug, Clone)]
pub struct VecEnv {
    pub envs: Vec<WrappedEnv>,
    pub obs_norm: ObsNormalizer,
    pub rew_norm: RewardNormalizer,
    pub repeat: RepeatPenalty,
    pub obs_dim: usize,
    pub action_count: usize,
}

impl VecEnv {
    pub fn new(cfg: &EnvConfig, num_envs: usize, gamma: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if num_envs == 0 {
            return Err(Error::config("agents", "need at least one environment"));
        }
        let timeout = cfg.resolved_timeout()?;
        let envs: Vec<WrappedEnv> = (0..num_envs)
            .map(|i| Ok(WrappedEnv::new(i, cfg.build_env()?, timeout, cfg.sticky_p, seed)))
            .collect::<Result<_>>()?;
        let obs_dim = envs[0].augmented_dim();
        let action_count = envs[0].action_count();
        Ok(Self {
            envs,
            obs_norm: ObsNormalizer::new(obs_dim),
            rew_norm: RewardNormalizer::new(num_envs, gamma),
            repeat: cfg.repeat(),
            obs_dim,
            action_count,
        })
    }

    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    /// Current observations, normalized with the current statistics.
    pub fn normalized_observations(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.envs.len(), self.obs_dim));
        for (i, env) in self.envs.iter().enumerate() {
            let raw = env.observation();
            let mut row = out.row_mut(i);
            self.obs_norm
                .normalize_into(&raw, row.as_slice_mut().expect("contiguous row"));
        }
        out
    }

    /// Step every environment, normalize rewards, apply the repeat penalty
    /// and fold the new observations into the observation statistics.
    pub fn step(&mut self, actions: &[usize]) -> Result<VecStep> {
        if actions.len() != self.envs.len() {
            return Err(Error::Dimension {
                expected: self.envs.len(),
                got: actions.len(),
                context: "vectorized actions",
            });
        }
        let n = self.envs.len();
        let mut out = VecStep {
            rewards: Vec::with_capacity(n),
            raw_rewards: Vec::with_capacity(n),
            terminals: Vec::with_capacity(n),
            executed_actions: Vec::with_capacity(n),
            episodes: Vec::new(),
        };
        for (i, (env, &a)) in self.envs.iter_mut().zip(actions).enumerate() {
            let step = env.step(a).map_err(|e| Error::Env {
                env: i,
                source: Box::new(e),
            })?;
            let scaled = self.rew_norm.normalize_reward(i, step.raw_reward, step.terminal);
            let penalized = apply_repeat_penalty(scaled, step.repeat_count, &self.repeat);
            out.rewards.push(penalized.clamp(-REWARD_CLIP, REWARD_CLIP));
            out.raw_rewards.push(step.raw_reward);
            out.terminals.push(step.terminal);
            out.executed_actions.push(step.executed_action);
            out.episodes.extend(step.episode);
            self.obs_norm.update_obs_stats(&env.observation());
        }
        Ok(out)
    }

    /// Run each environment for `t ~ U(1, max_steps)` uniformly random
    /// actions, feeding both normalizers. Returns the number of interactions.
    pub fn warmup_desync<R: Rng + ?Sized>(&mut self, max_steps: usize, rng: &mut R) -> Result<usize> {
        let mut total = 0;
        for i in 0..self.envs.len() {
            let steps = rng.random_range(1..=max_steps.max(1));
            for _ in 0..steps {
                let env = &mut self.envs[i];
                let a = env.random_action();
                let step = env.step(a).map_err(|e| Error::Env {
                    env: i,
                    source: Box::new(e),
                })?;
                self.rew_norm.normalize_reward(i, step.raw_reward, step.terminal);
                self.obs_norm.update_obs_stats(&env.observation());
            }
            total += steps;
        }
        Ok(total)
    }
}
