//! Toy control environments, the observation/reward wrapper stack and
//! vectorized rollout collection.

pub mod cartpole;
pub mod gridworld;
pub mod normalize;
pub mod rollout;
pub mod vec_env;
pub mod wrappers;

pub use cartpole::{cartpole_step, CartPole};
pub use gridworld::GridWorld;
pub use normalize::{ObsNormalizer, RewardNormalizer, RunningStat};
pub use rollout::{collect_rollout, ActionSelection, ActorCritic, RolloutBatch};
pub use vec_env::{EnvConfig, VecEnv, VecStep};
pub use wrappers::{
    apply_repeat_penalty, augment_observation, sticky_action, Env, EnvKind, EpisodeStats, RepeatPenalty,
    WrappedEnv,
};
