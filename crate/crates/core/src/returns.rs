//! n-step and TD(λ) return estimation over truncated on-policy trajectories.
//!
//! A trajectory holds `T` transitions. `terminals[t]` marks that the episode
//! ended with transition `t`; the successor value is then zero and the
//! recursion restarts for the next episode. The state after the final
//! transition is valued by `bootstrap_value`.

use crate::error::{Error, Result};

/// A single environment's slice of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    rewards: Vec<f64>,
    values: Vec<f64>,
    terminals: Vec<bool>,
    bootstrap_value: f64,
}

impl Trajectory {
    pub fn new(
        rewards: Vec<f64>,
        values: Vec<f64>,
        terminals: Vec<bool>,
        bootstrap_value: f64,
    ) -> Result<Self> {
        let len = rewards.len();
        if len == 0 {
            return Err(Error::Precondition("trajectory must be nonempty".into()));
        }
        if values.len() != len {
            return Err(Error::Dimension {
                expected: len,
                got: values.len(),
                context: "trajectory values",
            });
        }
        if terminals.len() != len {
            return Err(Error::Dimension {
                expected: len,
                got: terminals.len(),
                context: "trajectory terminals",
            });
        }
        if !bootstrap_value.is_finite()
            || rewards.iter().chain(values.iter()).any(|x| !x.is_finite())
        {
            return Err(Error::NonFinite("trajectory entries".into()));
        }
        Ok(Self {
            rewards,
            values,
            terminals,
            bootstrap_value,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn terminals(&self) -> &[bool] {
        &self.terminals
    }

    pub fn bootstrap_value(&self) -> f64 {
        self.bootstrap_value
    }

    /// Value of the state following transition `t`, zero across an episode end.
    fn next_value(&self, t: usize) -> f64 {
        if self.terminals[t] {
            0.0
        } else if t + 1 == self.len() {
            self.bootstrap_value
        } else {
            self.values[t + 1]
        }
    }
}

/// Discount and λ pair selecting one TD(λ) estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnConfig {
    gamma: f64,
    lambda: f64,
}

impl ReturnConfig {
    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config("gamma", format!("{gamma} not in [0, 1)")));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::config("lambda", format!("{lambda} not in [0, 1]")));
        }
        Ok(Self { gamma, lambda })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// k-step discounted return from step `t`, bootstrapped with the value of
/// the state `k` steps later. A terminal inside the window ends the sum
/// without a bootstrap term.
pub fn nstep_return(traj: &Trajectory, t: usize, k: usize, cfg: ReturnConfig) -> Result<f64> {
    if k == 0 || t + k > traj.len() {
        return Err(Error::Precondition(format!(
            "nstep window t={t}, k={k} exceeds trajectory length {}",
            traj.len()
        )));
    }
    let mut total = 0.0;
    let mut discount = 1.0;
    for i in 0..k {
        total += discount * traj.rewards[t + i];
        if traj.terminals[t + i] {
            return Ok(total);
        }
        discount *= cfg.gamma;
    }
    let tail = if t + k == traj.len() {
        traj.bootstrap_value
    } else {
        traj.values[t + k]
    };
    Ok(total + discount * tail)
}

/// Truncated TD(λ) returns for every step, computed by the backward
/// recursion `G_t = r_t + γ[(1-λ)V(s_{t+1}) + λG_{t+1}]` with `G_T` anchored at
/// the bootstrap value. λ-mass past the horizon lands on the longest estimate.
pub fn td_lambda_returns(traj: &Trajectory, cfg: ReturnConfig) -> Vec<f64> {
    let len = traj.len();
    let (gamma, lambda) = (cfg.gamma, cfg.lambda);
    let mut out = vec![0.0; len];
    let mut next_return = traj.bootstrap_value;
    for t in (0..len).rev() {
        out[t] = if traj.terminals[t] {
            traj.rewards[t]
        } else {
            let next_value = traj.next_value(t);
            traj.rewards[t] + gamma * ((1.0 - lambda) * next_value + lambda * next_return)
        };
        next_return = out[t];
    }
    out
}

/// Value-network regression targets, `TD(γ, λ_V)`.
pub fn compute_value_targets(traj: &Trajectory, lambda_v: f64, gamma: f64) -> Result<Vec<f64>> {
    Ok(td_lambda_returns(traj, ReturnConfig::new(gamma, lambda_v)?))
}

/// Advantages `TD(γ, λ_π)(s_t) - V(s_t)` against the trajectory's value estimates.
pub fn compute_advantages(traj: &Trajectory, lambda_pi: f64, gamma: f64) -> Result<Vec<f64>> {
    let returns = td_lambda_returns(traj, ReturnConfig::new(gamma, lambda_pi)?);
    Ok(returns
        .into_iter()
        .zip(&traj.values)
        .map(|(g, v)| g - v)
        .collect())
}

const ADV_STD_FLOOR: f64 = 1e-8;

/// Standardize to zero mean and unit (population) standard deviation.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.is_empty() {
        return Vec::new();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(ADV_STD_FLOOR);
    adv.iter().map(|a| (a - mean) / std).collect()
}
