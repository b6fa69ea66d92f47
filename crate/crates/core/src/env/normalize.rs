//! Streaming observation and reward normalization (Welford accumulation).

use serde::{Deserialize, Serialize};

const STD_FLOOR: f64 = 1e-8;
pub const OBS_CLIP: f64 = 3.0;
pub const REWARD_CLIP: f64 = 5.0;

/// Per-dimension running mean and population variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStat {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningStat {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim());
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *mean;
            *mean += delta / n;
            *m2 += delta * (v - *mean);
        }
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim()];
        }
        let n = self.count as f64;
        self.m2.iter().map(|m| (m / n).max(0.0)).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.variance().into_iter().map(f64::sqrt).collect()
    }
}

/// `clip((s - mean) / std, -3, 3)` with statistics shared by every network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub stat: RunningStat,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            stat: RunningStat::new(dim),
        }
    }

    pub fn update_obs_stats(&mut self, s: &[f64]) {
        self.stat.update(s);
    }

    pub fn normalize_obs(&self, s: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; s.len()];
        self.normalize_into(s, &mut out);
        out
    }

    pub fn normalize_into(&self, s: &[f64], out: &mut [f64]) {
        if self.stat.count == 0 {
            for (o, &v) in out.iter_mut().zip(s) {
                *o = v.clamp(-OBS_CLIP, OBS_CLIP);
            }
            return;
        }
        let n = self.stat.count as f64;
        for i in 0..s.len() {
            let std = (self.stat.m2[i] / n).max(0.0).sqrt().max(STD_FLOOR);
            out[i] = ((s[i] - self.stat.mean[i]) / std).clamp(-OBS_CLIP, OBS_CLIP);
        }
    }
}

/// Scales rewards so discounted returns have roughly unit variance.
///
/// Each environment keeps a discounted return accumulator `R ← γR + r`; the
/// variance of those accumulators sets the scale. Accumulators reset at
/// episode ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardNormalizer {
    pub gamma: f64,
    pub returns: Vec<f64>,
    pub stat: RunningStat,
}

impl RewardNormalizer {
    pub fn new(num_envs: usize, gamma: f64) -> Self {
        Self {
            gamma,
            returns: vec![0.0; num_envs],
            stat: RunningStat::new(1),
        }
    }

    /// Current divisor; 1 until at least two returns have been observed.
    pub fn scale(&self) -> f64 {
        if self.stat.count < 2 {
            1.0
        } else {
            self.stat.std()[0].max(STD_FLOOR)
        }
    }

    /// Update the environment's accumulator with raw reward `r` and return
    /// the normalized, clipped reward.
    pub fn normalize_reward(&mut self, env: usize, r: f64, terminal: bool) -> f64 {
        let acc = &mut self.returns[env];
        *acc = self.gamma * *acc + r;
        self.stat.update(&[*acc]);
        if terminal {
            *acc = 0.0;
        }
        (r / self.scale()).clamp(-REWARD_CLIP, REWARD_CLIP)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn welford_matches_batch_statistics() {
        let xs = [[1.0, -2.0], [3.0, 0.5], [-0.5, 4.0], [2.0, 2.0]];
        let mut stat = RunningStat::new(2);
        for x in &xs {
            stat.update(x);
        }
        for d in 0..2 {
            let mean = xs.iter().map(|x| x[d]).sum::<f64>() / 4.0;
            let var = xs.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(stat.mean[d], mean, epsilon = 1e-12);
            assert_abs_diff_eq!(stat.variance()[d], var, epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_maps_to_zero_and_outliers_clip() {
        let mut norm = ObsNormalizer::new(1);
        for x in [1.0, 2.0, 3.0, 4.0, 5.0] {
            norm.update_obs_stats(&[x]);
        }
        assert_eq!(norm.normalize_obs(&[3.0]), vec![0.0]);
        let sigma = norm.stat.std()[0];
        assert_eq!(norm.normalize_obs(&[3.0 + 10.0 * sigma]), vec![3.0]);
        assert_eq!(norm.normalize_obs(&[3.0 - 10.0 * sigma]), vec![-3.0]);
    }

    #[test]
    fn constant_dimension_normalizes_to_zero() {
        let mut norm = ObsNormalizer::new(2);
        for i in 0..10 {
            norm.update_obs_stats(&[1.0, i as f64]);
        }
        assert_eq!(norm.normalize_obs(&[1.0, 4.5])[0], 0.0);
    }

    #[test]
    fn running_stats_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dist = Normal::new(5.0, 2.0).unwrap();
        let mut stat = RunningStat::new(1);
        for _ in 0..100_000 {
            stat.update(&[dist.sample(&mut rng)]);
        }
        assert!((stat.mean[0] / 5.0 - 1.0).abs() < 0.02);
        assert!((stat.std()[0] / 2.0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn first_reward_passes_through() {
        let mut rn = RewardNormalizer::new(1, 0.99);
        assert_eq!(rn.normalize_reward(0, 0.7, false), 0.7);
    }

    #[test]
    fn large_rewards_clip() {
        let mut rn = RewardNormalizer::new(1, 0.99);
        assert_eq!(rn.normalize_reward(0, 12.0, false), 5.0);
        for _ in 0..100 {
            rn.normalize_reward(0, 1.0, false);
        }
        // return std is now a few tens; a reward far beyond 5 of those clips
        let scale = rn.scale();
        assert_eq!(rn.normalize_reward(0, -12.0 * scale, true), -5.0);
    }

    #[test]
    fn constant_reward_stream_gives_unit_return_std() {
        // constant +1 rewards in fixed-length episodes
        let gamma = 0.99;
        let mut rn = RewardNormalizer::new(1, gamma);
        let mut norm_return = 0.0;
        let mut tail = RunningStat::new(1);
        for step in 0..200_000usize {
            let terminal = step % 200 == 199;
            let r = rn.normalize_reward(0, 1.0, terminal);
            norm_return = gamma * norm_return + r;
            if step >= 100_000 {
                tail.update(&[norm_return]);
            }
            if terminal {
                norm_return = 0.0;
            }
        }
        let std = tail.std()[0];
        assert!((0.9..=1.1).contains(&std), "return std {std}");
    }
}
