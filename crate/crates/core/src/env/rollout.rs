use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::vec_env::VecEnv;
use super::wrappers::EpisodeStats;
use crate::error::{Error, Result};
use crate::nn::CategoricalPolicy;
use crate::returns::Trajectory;

/// Anything that maps a batch of normalized observations to action logits
/// and state values.
pub trait ActorCritic {
    fn logits(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>>;
    fn values(&self, obs: ArrayView2<f64>) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSelection {
    Sample,
    Greedy,
}

/// `A` environments × `T` steps of on-policy experience, stored env-major:
/// sample `(env, t)` lives at index `env * T + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub num_envs: usize,
    pub horizon: usize,
    pub obs_dim: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub raw_rewards: Vec<f64>,
    pub terminals: Vec<bool>,
    pub behavior_log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub bootstrap_values: Vec<f64>,
    pub episodes: Vec<EpisodeStats>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.num_envs * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, env: usize, t: usize) -> usize {
        env * self.horizon + t
    }

    pub fn obs_matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.len(), self.obs_dim), self.obs.clone()).expect("obs layout")
    }

    pub fn obs_rows(&self, idx: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((idx.len(), self.obs_dim));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r)
                .as_slice_mut()
                .expect("contiguous")
                .copy_from_slice(&self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]);
        }
        out
    }

    pub fn trajectory(&self, env: usize) -> Result<Trajectory> {
        let range = self.index(env, 0)..self.index(env, 0) + self.horizon;
        Trajectory::new(
            self.rewards[range.clone()].to_vec(),
            self.values[range.clone()].to_vec(),
            self.terminals[range].to_vec(),
            self.bootstrap_values[env],
        )
    }
}

/// Run the policy for `horizon` steps in every environment.
///
/// Values and bootstrap values come from `agent.values`; log-probabilities
/// are those of the executed policy at sampling time.
pub fn collect_rollout<P: ActorCritic + ?Sized, R: Rng + ?Sized>(
    venv: &mut VecEnv,
    agent: &P,
    horizon: usize,
    selection: ActionSelection,
    rng: &mut R,
) -> Result<RolloutBatch> {
    let a = venv.num_envs();
    let d = venv.obs_dim;
    let n = a * horizon;
    let mut batch = RolloutBatch {
        num_envs: a,
        horizon,
        obs_dim: d,
        obs: vec![0.0; n * d],
        actions: vec![0; n],
        rewards: vec![0.0; n],
        raw_rewards: vec![0.0; n],
        terminals: vec![false; n],
        behavior_log_probs: vec![0.0; n],
        values: vec![0.0; n],
        bootstrap_values: Vec::new(),
        episodes: Vec::new(),
    };
    for t in 0..horizon {
        let obs = venv.normalized_observations();
        let logits = agent.logits(obs.view())?;
        let values = agent.values(obs.view())?;
        let mut actions = Vec::with_capacity(a);
        for env in 0..a {
            let pol = CategoricalPolicy::new(logits.row(env).as_slice().expect("contiguous"));
            let (action, log_prob) = match selection {
                ActionSelection::Sample => pol.sample(rng),
                ActionSelection::Greedy => {
                    let best = pol.argmax();
                    (best, pol.log_prob(best))
                }
            };
            if !log_prob.is_finite() {
                return Err(Error::NonFinite(format!("behavior log-prob in env {env}")));
            }
            let i = batch.index(env, t);
            batch.obs[i * d..(i + 1) * d].copy_from_slice(obs.row(env).as_slice().expect("contiguous"));
            batch.actions[i] = action;
            batch.behavior_log_probs[i] = log_prob;
            batch.values[i] = values[env];
            actions.push(action);
        }
        let step = venv.step(&actions)?;
        for env in 0..a {
            let i = batch.index(env, t);
            batch.rewards[i] = step.rewards[env];
            batch.raw_rewards[i] = step.raw_rewards[env];
            batch.terminals[i] = step.terminals[env];
        }
        batch.episodes.extend(step.episodes);
    }
    let obs = venv.normalized_observations();
    batch.bootstrap_values = agent.values(obs.view())?;
    Ok(batch)
}
