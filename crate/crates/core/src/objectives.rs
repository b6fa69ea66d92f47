//! Minimization forms of the three phase losses: clipped surrogate with
//! entropy bonus, value regression, and KL-constrained distillation.
//!
//! Every loss is a per-sample mean and returns its gradient with respect to
//! the network outputs that produced it, ready for [`crate::nn::Mlp::backward`].

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::categorical::{entropy_grad, kl_grad_wrt_q, CategoricalPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub epsilon: f64,
    pub entropy_coef: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            entropy_coef: 0.001,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be > 0"));
        }
        if !(self.entropy_coef >= 0.0) {
            return Err(Error::config("entropy_coef", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistilConfig {
    pub beta: f64,
}

impl Default for DistilConfig {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

impl DistilConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(Error::config("beta", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateOutput {
    pub loss: f64,
    pub grad_logits: Array2<f64>,
    /// Mean of the clipped-surrogate term alone.
    pub surrogate: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Mean per-sample surrogate terms, before negation.
    pub terms: Vec<f64>,
}

fn ensure_finite<'a>(what: &str, xs: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if xs.into_iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

fn ensure_len(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            expected,
            got,
            context,
        });
    }
    Ok(())
}

/// `-mean[min(ρÂ, clip(ρ, 1-ε, 1+ε)Â) + c_eb·S]` with `ρ = π(a|s)/π_old(a|s)`.
///
/// The entropy bonus sits outside the min and is never gated by the clip.
pub fn clip_surrogate_loss(
    logits: ArrayView2<f64>,
    actions: &[usize],
    old_log_probs: &[f64],
    advantages: &[f64],
    cfg: &ClipConfig,
) -> Result<SurrogateOutput> {
    let n = logits.nrows();
    ensure_len(n, actions.len(), "actions")?;
    ensure_len(n, old_log_probs.len(), "old log-probs")?;
    ensure_len(n, advantages.len(), "advantages")?;
    ensure_finite("logits", logits.iter())?;
    ensure_finite("old log-probs", old_log_probs)?;
    ensure_finite("advantages", advantages)?;
    if n == 0 {
        return Err(Error::Precondition("empty surrogate batch".into()));
    }
    let action_count = logits.ncols();
    let (lo, hi) = (1.0 - cfg.epsilon, 1.0 + cfg.epsilon);
    let scale = 1.0 / n as f64;

    let mut grad_logits = Array2::zeros((n, action_count));
    let mut terms = Vec::with_capacity(n);
    let (mut ent_sum, mut clipped) = (0.0, 0usize);
    for i in 0..n {
        let row = logits.row(i).to_vec();
        let a = actions[i];
        if a >= action_count {
            return Err(Error::InvalidAction {
                action: a,
                action_count,
            });
        }
        let pol = CategoricalPolicy::new(&row);
        let ratio = (pol.log_prob(a) - old_log_probs[i]).exp();
        let adv = advantages[i];
        let unclipped = ratio * adv;
        let clipped_term = ratio.clamp(lo, hi) * adv;
        let term = unclipped.min(clipped_term);
        terms.push(term);
        if !(lo..=hi).contains(&ratio) {
            clipped += 1;
        }
        // d term / d ratio: Â on the unclipped branch, zero when the clipped
        // constant wins.
        let d_ratio = if unclipped <= clipped_term { adv } else { 0.0 };
        let probs = pol.probs();
        let ent = pol.entropy();
        ent_sum += ent;
        let d_ent = entropy_grad(&row);
        let mut g = grad_logits.row_mut(i);
        for j in 0..action_count {
            let indicator = if j == a { 1.0 } else { 0.0 };
            let d_term = d_ratio * ratio * (indicator - probs[j]);
            g[j] = -scale * (d_term + cfg.entropy_coef * d_ent[j]);
        }
    }
    let surrogate = terms.iter().sum::<f64>() * scale;
    let entropy = ent_sum * scale;
    Ok(SurrogateOutput {
        loss: -(surrogate + cfg.entropy_coef * entropy),
        grad_logits,
        surrogate,
        entropy,
        clip_fraction: clipped as f64 * scale,
        terms,
    })
}

/// `mean[(pred - target)²]` and its gradient with respect to `pred`.
pub fn value_mse_loss(predicted: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    ensure_len(predicted.len(), targets.len(), "value targets")?;
    if predicted.is_empty() {
        return Err(Error::Precondition("empty value batch".into()));
    }
    ensure_finite("value predictions", predicted)?;
    ensure_finite("value targets", targets)?;
    let n = predicted.len() as f64;
    let mut loss = 0.0;
    let grad = predicted
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let diff = p - t;
            loss += diff * diff;
            2.0 * diff / n
        })
        .collect();
    Ok((loss / n, grad))
}

#[derive(Debug, Clone)]
pub struct DistilOutput {
    pub loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    /// Gradient with respect to the policy network's value head.
    pub grad_value_head: Vec<f64>,
    /// Gradient with respect to the policy network's logits.
    pub grad_logits: Array2<f64>,
}

/// `mean[(V_π - V_V)²] + β·mean[KL(π_old ‖ π)]`.
///
/// `value_targets` are treated as constants, so gradients exist only for the
/// policy network's outputs.
pub fn distillation_loss(
    policy_values: &[f64],
    value_targets: &[f64],
    new_logits: ArrayView2<f64>,
    old_logits: ArrayView2<f64>,
    cfg: &DistilConfig,
) -> Result<DistilOutput> {
    let n = new_logits.nrows();
    ensure_len(n, policy_values.len(), "policy values")?;
    ensure_len(n, old_logits.nrows(), "old logits")?;
    ensure_len(new_logits.ncols(), old_logits.ncols(), "action count")?;
    ensure_finite("new logits", new_logits.iter())?;
    ensure_finite("old logits", old_logits.iter())?;
    let (value_loss, grad_value_head) = value_mse_loss(policy_values, value_targets)?;
    let scale = 1.0 / n as f64;
    let mut grad_logits = Array2::zeros(new_logits.dim());
    let mut kl_sum = 0.0;
    for i in 0..n {
        let old = old_logits.row(i).to_vec();
        let new = new_logits.row(i).to_vec();
        kl_sum += CategoricalPolicy::new(&old).kl_to(&CategoricalPolicy::new(&new));
        if cfg.beta != 0.0 {
            let g = kl_grad_wrt_q(&old, &new);
            for (slot, v) in grad_logits.row_mut(i).iter_mut().zip(g) {
                *slot = cfg.beta * scale * v;
            }
        }
    }
    let kl = kl_sum * scale;
    Ok(DistilOutput {
        loss: value_loss + cfg.beta * kl,
        value_loss,
        kl,
        grad_value_head,
        grad_logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    fn log_prob(logits: &[f64], a: usize) -> f64 {
        CategoricalPolicy::new(logits).log_prob(a)
    }

    /// Logits for a two-action policy where action 0 has probability `p`.
    fn two_action(p: f64) -> [f64; 2] {
        [p.ln(), (1.0 - p).ln()]
    }

    #[test]
    fn fresh_snapshot_gives_mean_advantage() {
        let logits = arr2(&[[0.1, 0.5, -0.3], [1.0, 0.0, 0.2]]);
        let actions = [2, 0];
        let old: Vec<f64> = (0..2)
            .map(|i| log_prob(logits.row(i).as_slice().unwrap(), actions[i]))
            .collect();
        let adv = [0.7, -1.3];
        let cfg = ClipConfig {
            epsilon: 0.2,
            entropy_coef: 0.0,
        };
        let out = clip_surrogate_loss(logits.view(), &actions, &old, &adv, &cfg).unwrap();
        assert_abs_diff_eq!(out.loss, 0.3, epsilon = 1e-12);
        assert_eq!(out.clip_fraction, 0.0);
    }

    #[test]
    fn upper_clip_binds_for_positive_advantage() {
        // ρ = 1.5: new p = 0.6, old p = 0.4
        let logits = arr2(&[two_action(0.6)]);
        let old = [0.4f64.ln()];
        let cfg = ClipConfig {
            epsilon: 0.2,
            entropy_coef: 0.0,
        };
        let out = clip_surrogate_loss(logits.view(), &[0], &old, &[1.0], &cfg).unwrap();
        assert_abs_diff_eq!(out.terms[0], 1.2, epsilon = 1e-12);
        assert!(out.grad_logits.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn lower_clip_binds_for_negative_advantage() {
        // ρ = 0.5: new p = 0.2, old p = 0.4
        let logits = arr2(&[two_action(0.2)]);
        let old = [0.4f64.ln()];
        let cfg = ClipConfig {
            epsilon: 0.2,
            entropy_coef: 0.0,
        };
        let out = clip_surrogate_loss(logits.view(), &[0], &old, &[-1.0], &cfg).unwrap();
        assert_abs_diff_eq!(out.terms[0], -0.8, epsilon = 1e-12);
        assert!(out.grad_logits.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn entropy_gradient_survives_clipping() {
        let logits = arr2(&[two_action(0.6)]);
        let old = [0.4f64.ln()];
        let cfg = ClipConfig {
            epsilon: 0.2,
            entropy_coef: 0.01,
        };
        let out = clip_surrogate_loss(logits.view(), &[0], &old, &[1.0], &cfg).unwrap();
        assert!(out.grad_logits.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn nan_inputs_rejected() {
        let logits = arr2(&[[0.0, 0.0]]);
        let cfg = ClipConfig::default();
        assert!(matches!(
            clip_surrogate_loss(logits.view(), &[0], &[f64::NAN], &[1.0], &cfg),
            Err(Error::NonFinite(_))
        ));
        assert!(clip_surrogate_loss(logits.view(), &[0], &[0.0], &[f64::INFINITY], &cfg).is_err());
        assert!(clip_surrogate_loss(logits.view(), &[0, 1], &[0.0], &[1.0], &cfg).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(value_mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        let (loss, grad) = value_mse_loss(&[0.0, 0.0], &[1.0, 3.0]).unwrap();
        assert_eq!(loss, 5.0);
        assert_eq!(grad, vec![-1.0, -3.0]);
    }

    #[test]
    fn mse_gradient_finite_difference() {
        let pred = [0.3, -1.2, 2.5];
        let targ = [1.0, 0.4, -0.5];
        let (_, grad) = value_mse_loss(&pred, &targ).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = pred;
            let mut down = pred;
            up[i] += h;
            down[i] -= h;
            let fd = (value_mse_loss(&up, &targ).unwrap().0 - value_mse_loss(&down, &targ).unwrap().0)
                / (2.0 * h);
            assert_abs_diff_eq!(fd, grad[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn distillation_examples() {
        let logits = arr2(&[[0.3, -0.1, 0.9]]);
        let cfg = DistilConfig { beta: 1.0 };
        let out = distillation_loss(&[0.7], &[0.7], logits.view(), logits.view(), &cfg).unwrap();
        assert_eq!(out.loss, 0.0);

        let new = arr2(&[[0.9f64.ln(), 0.1f64.ln()]]);
        let old = arr2(&[[0.5f64.ln(), 0.5f64.ln()]]);
        let cfg0 = DistilConfig { beta: 0.0 };
        let out = distillation_loss(&[1.0], &[0.0], new.view(), old.view(), &cfg0).unwrap();
        assert_abs_diff_eq!(out.loss, 1.0, epsilon = 1e-12);

        let out = distillation_loss(&[1.0], &[0.0], new.view(), old.view(), &cfg).unwrap();
        let kl = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert_abs_diff_eq!(out.loss, 1.0 + kl, epsilon = 1e-12);
        assert_abs_diff_eq!(out.loss, 1.5108, epsilon = 1e-4);
    }

    #[test]
    fn surrogate_gradient_finite_difference() {
        let logits = arr2(&[[0.2, -0.4, 0.9], [1.1, 0.3, -0.6], [-0.2, 0.0, 0.4]]);
        let actions = [1, 0, 2];
        let old = [-1.0, -0.9, -1.4];
        let adv = [0.8, -1.1, 0.5];
        let cfg = ClipConfig {
            epsilon: 0.2,
            entropy_coef: 0.05,
        };
        let out = clip_surrogate_loss(logits.view(), &actions, &old, &adv, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut up = logits.clone();
                let mut down = logits.clone();
                up[[i, j]] += h;
                down[[i, j]] -= h;
                let lu = clip_surrogate_loss(up.view(), &actions, &old, &adv, &cfg).unwrap().loss;
                let ld = clip_surrogate_loss(down.view(), &actions, &old, &adv, &cfg).unwrap().loss;
                assert_abs_diff_eq!((lu - ld) / (2.0 * h), out.grad_logits[[i, j]], epsilon = 1e-8);
            }
        }
    }
}
