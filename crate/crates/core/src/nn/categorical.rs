//! Categorical policy helpers over unnormalized logits. Entropies and
//! divergences are in nats.

use rand::Rng;

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - log_z).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// A categorical distribution over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPolicy {
    logits: Vec<f64>,
    log_probs: Vec<f64>,
}

impl CategoricalPolicy {
    pub fn new(logits: &[f64]) -> Self {
        Self {
            logits: logits.to_vec(),
            log_probs: log_softmax(logits),
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.log_probs[action]
    }

    pub fn entropy(&self) -> f64 {
        -self
            .log_probs
            .iter()
            .map(|&lp| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * lp })
            .sum::<f64>()
    }

    /// Most probable action; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &l) in self.logits.iter().enumerate() {
            if l > self.logits[best] {
                best = i;
            }
        }
        best
    }

    /// Inverse-CDF sample with its log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut chosen = None;
        for (i, lp) in self.log_probs.iter().enumerate() {
            cum += lp.exp();
            if u < cum {
                chosen = Some(i);
                break;
            }
        }
        // Rounding can leave the total mass just under u; fall back to the
        // last action with nonzero probability.
        let action = chosen.unwrap_or_else(|| {
            self.log_probs
                .iter()
                .rposition(|&lp| lp > f64::NEG_INFINITY)
                .unwrap_or(0)
        });
        (action, self.log_probs[action])
    }

    /// `KL(self ‖ other)`.
    pub fn kl_to(&self, other: &CategoricalPolicy) -> f64 {
        self.log_probs
            .iter()
            .zip(&other.log_probs)
            .map(|(&lp, &lq)| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * (lp - lq) })
            .sum()
    }
}

pub fn sample_action<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> (usize, f64) {
    CategoricalPolicy::new(logits).sample(rng)
}

pub fn entropy(logits: &[f64]) -> f64 {
    CategoricalPolicy::new(logits).entropy()
}

/// `KL(p ‖ q)`; argument order is (old, new).
pub fn kl_categorical(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    assert_eq!(p_logits.len(), q_logits.len(), "action counts differ");
    CategoricalPolicy::new(p_logits).kl_to(&CategoricalPolicy::new(q_logits))
}

/// d entropy / d logits: `-p_j (log p_j + S)`.
pub fn entropy_grad(logits: &[f64]) -> Vec<f64> {
    let pol = CategoricalPolicy::new(logits);
    let s = pol.entropy();
    pol.log_probs
        .iter()
        .map(|&lp| {
            let p = lp.exp();
            if p == 0.0 {
                0.0
            } else {
                -p * (lp + s)
            }
        })
        .collect()
}

/// d KL(p ‖ q) / d q_logits: `q - p`.
pub fn kl_grad_wrt_q(p_logits: &[f64], q_logits: &[f64]) -> Vec<f64> {
    softmax(q_logits)
        .into_iter()
        .zip(softmax(p_logits))
        .map(|(q, p)| q - p)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_two_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, lp) = sample_action(&[0.0, 0.0], &mut rng);
        assert_abs_diff_eq!(lp, -std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn saturated_logits_pick_dominant_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (a, lp) = sample_action(&[1000.0, 0.0], &mut rng);
            assert_eq!(a, 0);
            assert_abs_diff_eq!(lp, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn empirical_frequencies_within_three_sigma() {
        let logits = [0.3, -1.0, 1.2, 0.0];
        let probs = softmax(&logits);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_action(&logits, &mut rng).0] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(entropy(&[0.0; 4]), 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(entropy(&[0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]), 0.0);
        let (a, b) = (0.7f64, 0.3f64);
        let logits = [a.ln(), b.ln()];
        let direct = -(a * a.ln() + b * b.ln());
        assert_abs_diff_eq!(entropy(&logits), direct, epsilon = 1e-12);
        assert_abs_diff_eq!(entropy(&logits), 0.6109, epsilon = 1e-4);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_categorical(&[0.4, -0.2, 1.0], &[0.4, -0.2, 1.0]), 0.0);
        let p = [0.5f64.ln(), 0.5f64.ln()];
        let q = [0.9f64.ln(), 0.1f64.ln()];
        let direct = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert_abs_diff_eq!(kl_categorical(&p, &q), direct, epsilon = 1e-12);
        assert_abs_diff_eq!(kl_categorical(&p, &q), 0.5108, epsilon = 1e-4);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        let p = [0.2, -0.7, 1.1];
        let q = [-0.4, 0.3, 0.5];
        let eg = entropy_grad(&q);
        let kg = kl_grad_wrt_q(&p, &q);
        for j in 0..3 {
            let mut up = q;
            let mut down = q;
            up[j] += h;
            down[j] -= h;
            assert_abs_diff_eq!((entropy(&up) - entropy(&down)) / (2.0 * h), eg[j], epsilon = 1e-8);
            assert_abs_diff_eq!(
                (kl_categorical(&p, &up) - kl_categorical(&p, &down)) / (2.0 * h),
                kg[j],
                epsilon = 1e-8
            );
        }
    }

    proptest! {
        #[test]
        fn softmax_normalized(logits in prop::collection::vec(-50.0f64..50.0, 1..10)) {
            let p = softmax(&logits);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(log_softmax(&logits).iter().all(|&lp| lp <= 0.0));
        }

        #[test]
        fn kl_nonnegative(
            p in prop::collection::vec(-5.0f64..5.0, 4),
            q in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            prop_assert!(kl_categorical(&p, &q) >= -1e-12);
        }
    }
}
