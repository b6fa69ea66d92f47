//! Per-environment wrapper: sticky actions, timeouts, repeat tracking and
//! time/previous-action observation features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cartpole::CartPole;
use super::gridworld::{GridPos, GridWorld};
use crate::error::{Error, Result};

/// With probability `p_repeat` execute the previous action instead of the
/// intended one. Before any action has been taken the intended one runs.
pub fn sticky_action<R: Rng + ?Sized>(
    intended: usize,
    last_action: Option<usize>,
    p_repeat: f64,
    rng: &mut R,
) -> usize {
    match last_action {
        Some(last) if p_repeat > 0.0 && rng.random::<f64>() < p_repeat => last,
        _ => intended,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatPenalty {
    pub threshold: u64,
    pub penalty: f64,
}

impl Default for RepeatPenalty {
    fn default() -> Self {
        Self {
            threshold: 100,
            penalty: 0.25,
        }
    }
}

/// Subtract the penalty (normalized units) once the same action has been
/// repeated more than `threshold` times in a row.
pub fn apply_repeat_penalty(normalized_reward: f64, repeat_count: u64, cfg: &RepeatPenalty) -> f64 {
    if repeat_count > cfg.threshold {
        normalized_reward - cfg.penalty
    } else {
        normalized_reward
    }
}

/// Append the elapsed-time fraction and a one-hot of the previous action.
pub fn augment_observation(
    raw_obs: &[f64],
    steps_elapsed: usize,
    t_max: usize,
    prev_action: Option<usize>,
    action_count: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw_obs.len() + 1 + action_count);
    out.extend_from_slice(raw_obs);
    out.push(steps_elapsed as f64 / t_max as f64);
    let start = out.len();
    out.resize(start + action_count, 0.0);
    if let Some(a) = prev_action {
        out[start + a] = 1.0;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Cartpole,
    Gridworld,
}

/// The bundled toy environments.
#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    CartPole(CartPole),
    GridWorld(GridWorld),
}

impl Env {
    pub fn new(kind: EnvKind, grid_size: usize) -> Result<Self> {
        Ok(match kind {
            EnvKind::Cartpole => Env::CartPole(CartPole::new()),
            EnvKind::Gridworld => Env::GridWorld(GridWorld::new(grid_size)?),
        })
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Env::CartPole(_) => CartPole::OBS_DIM,
            Env::GridWorld(_) => GridWorld::OBS_DIM,
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            Env::CartPole(_) => CartPole::ACTIONS,
            Env::GridWorld(_) => GridWorld::ACTIONS,
        }
    }

    pub fn default_timeout(&self) -> usize {
        match self {
            Env::CartPole(_) => CartPole::DEFAULT_TIMEOUT,
            Env::GridWorld(_) => GridWorld::DEFAULT_TIMEOUT,
        }
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        match self {
            Env::CartPole(e) => e.reset(rng),
            Env::GridWorld(e) => e.reset(),
        }
    }

    pub fn step(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)> {
        match self {
            Env::CartPole(e) => e.step(action),
            Env::GridWorld(e) => e.step(action),
        }
    }

    fn state_words(&self) -> Vec<f64> {
        match self {
            Env::CartPole(e) => e.state.to_vec(),
            Env::GridWorld(e) => vec![e.pos.row as f64, e.pos.col as f64],
        }
    }

    fn load_state_words(&mut self, words: &[f64]) -> Result<()> {
        match self {
            Env::CartPole(e) if words.len() == 4 => {
                e.state.copy_from_slice(words);
                Ok(())
            }
            Env::GridWorld(e) if words.len() == 2 => {
                e.pos = GridPos {
                    row: words[0] as usize,
                    col: words[1] as usize,
                };
                Ok(())
            }
            _ => Err(Error::Checkpoint("environment state length".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub env: usize,
    /// Undiscounted raw return.
    pub ret: f64,
    pub length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrappedStep {
    pub executed_action: usize,
    pub raw_reward: f64,
    pub repeat_count: u64,
    /// Episode ended (environment terminal or timeout); the wrapper has
    /// already reset.
    pub terminal: bool,
    pub episode: Option<EpisodeStats>,
}

/// One environment instance with its bookkeeping.
#[derive(Debug, Clone)]
pub struct WrappedEnv {
    pub index: usize,
    pub env: Env,
    pub t_max: usize,
    pub steps_elapsed: usize,
    pub repeat_count: u64,
    pub last_action: Option<usize>,
    pub sticky_p: f64,
    pub raw_obs: Vec<f64>,
    pub episode_return: f64,
    rng: ChaCha8Rng,
}

impl WrappedEnv {
    pub fn new(index: usize, env: Env, t_max: usize, sticky_p: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // stream 0 is reserved for the trainer; env `i` draws from stream i + 1
        rng.set_stream(index as u64 + 1);
        let mut env = env;
        let raw_obs = env.reset(&mut rng);
        Self {
            index,
            env,
            t_max,
            steps_elapsed: 0,
            repeat_count: 0,
            last_action: None,
            sticky_p,
            raw_obs,
            episode_return: 0.0,
            rng,
        }
    }

    pub fn action_count(&self) -> usize {
        self.env.action_count()
    }

    pub fn augmented_dim(&self) -> usize {
        self.env.obs_dim() + 1 + self.env.action_count()
    }

    pub fn observation(&self) -> Vec<f64> {
        augment_observation(
            &self.raw_obs,
            self.steps_elapsed,
            self.t_max,
            self.last_action,
            self.env.action_count(),
        )
    }

    pub fn step(&mut self, intended: usize) -> Result<WrappedStep> {
        let action_count = self.env.action_count();
        if intended >= action_count {
            return Err(Error::InvalidAction {
                action: intended,
                action_count,
            });
        }
        let executed = sticky_action(intended, self.last_action, self.sticky_p, &mut self.rng);
        self.repeat_count = if self.last_action == Some(executed) {
            self.repeat_count + 1
        } else {
            0
        };
        let repeat_count = self.repeat_count;
        let (obs, reward, done) = self.env.step(executed)?;
        self.last_action = Some(executed);
        self.steps_elapsed += 1;
        self.episode_return += reward;
        self.raw_obs = obs;
        let terminal = done || self.steps_elapsed >= self.t_max;
        let episode = if terminal {
            let stats = EpisodeStats {
                env: self.index,
                ret: self.episode_return,
                length: self.steps_elapsed,
            };
            self.reset();
            Some(stats)
        } else {
            None
        };
        Ok(WrappedStep {
            executed_action: executed,
            raw_reward: reward,
            repeat_count,
            terminal,
            episode,
        })
    }

    pub fn reset(&mut self) {
        self.raw_obs = self.env.reset(&mut self.rng);
        self.steps_elapsed = 0;
        self.repeat_count = 0;
        self.last_action = None;
        self.episode_return = 0.0;
    }

    pub fn random_action(&mut self) -> usize {
        self.rng.random_range(0..self.env.action_count())
    }

    /// Flattened mutable state for checkpoints.
    pub(crate) fn state_words(&self) -> Vec<f64> {
        let mut w = vec![
            self.steps_elapsed as f64,
            self.repeat_count as f64,
            self.last_action.map_or(-1.0, |a| a as f64),
            self.episode_return,
            self.raw_obs.len() as f64,
        ];
        w.extend_from_slice(&self.raw_obs);
        w.extend(self.env.state_words());
        w
    }

    pub(crate) fn load_state_words(&mut self, w: &[f64]) -> Result<()> {
        if w.len() < 5 {
            return Err(Error::Checkpoint("truncated environment state".into()));
        }
        let obs_len = w[4] as usize;
        if w.len() < 5 + obs_len {
            return Err(Error::Checkpoint("truncated environment state".into()));
        }
        self.steps_elapsed = w[0] as usize;
        self.repeat_count = w[1] as u64;
        self.last_action = if w[2] < 0.0 { None } else { Some(w[2] as usize) };
        self.episode_return = w[3];
        self.raw_obs = w[5..5 + obs_len].to_vec();
        self.env.load_state_words(&w[5 + obs_len..])
    }

    pub(crate) fn rng_state(&self) -> ([u8; 32], u64, u128) {
        (self.rng.get_seed(), self.rng.get_stream(), self.rng.get_word_pos())
    }

    pub(crate) fn set_rng_state(&mut self, seed: [u8; 32], stream: u64, word_pos: u128) {
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        self.rng = rng;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sticky_probability_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sticky_action(1, Some(0), 0.0, &mut rng), 1);
            assert_eq!(sticky_action(1, Some(0), 1.0, &mut rng), 0);
        }
        assert_eq!(sticky_action(1, None, 1.0, &mut rng), 1);
    }

    #[test]
    fn sticky_frequency_within_three_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let repeats = (0..n)
            .filter(|_| sticky_action(1, Some(0), 0.25, &mut rng) == 0)
            .count();
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        assert!((repeats as f64 - 0.25 * n as f64).abs() < 3.0 * sigma);
    }

    #[test]
    fn repeat_penalty_threshold_is_strict() {
        let cfg = RepeatPenalty::default();
        assert_eq!(apply_repeat_penalty(0.3, 100, &cfg), 0.3);
        assert_eq!(apply_repeat_penalty(0.0, 101, &cfg), -0.25);
        assert_eq!(apply_repeat_penalty(0.0, 0, &cfg), 0.0);
    }

    #[test]
    fn augmented_features() {
        let obs = augment_observation(&[0.5, -0.5], 0, 200, None, 4);
        assert_eq!(obs, vec![0.5, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let obs = augment_observation(&[0.5], 200, 200, Some(2), 4);
        assert_eq!(obs, vec![0.5, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn repeat_count_resets_on_change() {
        let env = Env::new(EnvKind::Gridworld, 5).unwrap();
        let mut w = WrappedEnv::new(0, env, 1000, 0.0, 3);
        for i in 0..150 {
            let s = w.step(0).unwrap();
            assert_eq!(s.repeat_count, i);
        }
        let s = w.step(2).unwrap();
        assert_eq!(s.repeat_count, 0);
    }

    #[test]
    fn timeout_ends_episode() {
        let env = Env::new(EnvKind::Gridworld, 5).unwrap();
        let mut w = WrappedEnv::new(0, env, 7, 0.0, 3);
        for _ in 0..6 {
            assert!(!w.step(0).unwrap().terminal);
        }
        let s = w.step(0).unwrap();
        assert!(s.terminal);
        assert_eq!(s.episode.unwrap().length, 7);
        assert_eq!(w.steps_elapsed, 0);
    }

    #[test]
    fn invalid_action_rejected() {
        let env = Env::new(EnvKind::Cartpole, 0).unwrap();
        let mut w = WrappedEnv::new(0, env, 10, 0.0, 3);
        assert!(matches!(w.step(5), Err(Error::InvalidAction { .. })));
    }
}
