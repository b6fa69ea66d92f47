use std::collections::VecDeque;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DnaConfig, Mode};
use super::metrics::{Emitter, MetricsSink};
use crate::env::{collect_rollout, ActionSelection, ActorCritic, RolloutBatch, VecEnv, WrappedEnv};
use crate::error::{Error, Result};
use crate::nn::{clip_global_grad_norm, AdamConfig, AdamState, CategoricalPolicy, HeadSpec, Mlp, NetSpec};
use crate::nn::{adam_step, ParamSnapshot, ParameterBlock};
use crate::noise::{NoiseReading, NoiseScaleProbe};
use crate::objectives::{clip_surrogate_loss, distillation_loss, value_mse_loss, ClipConfig, DistilConfig};
use crate::returns::{compute_advantages, compute_value_targets, normalize_advantages};

/// Policy network heads: action logits, then the auxiliary value head.
pub const PI_HEAD: usize = 0;
pub const AUX_VALUE_HEAD: usize = 1;
const RECENT_EPISODES: usize = 100;
const EVAL_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Shuffled mini-batch partitions of `0..n`. A trailing partial batch is
/// dropped.
pub fn minibatch_iterator<R: Rng + ?Sized>(n: usize, mb_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks_exact(mb_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Flattened rollout ready for optimization.
#[derive(Debug, Clone)]
pub struct PhaseData {
    pub obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    /// Normalized once per batch.
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

impl PhaseData {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn gather<T: Copy>(xs: &[T], idx: &[usize]) -> Vec<T> {
        idx.iter().map(|&i| xs[i]).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub updates: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// Policy phase: mean entropy. Distillation: value-matching term.
    pub aux: f64,
    /// Policy phase: clip fraction. Distillation: KL term.
    pub aux2: f64,
    pub noise: Option<NoiseReading>,
    pub noise_aux: Option<NoiseReading>,
}

impl PhaseStats {
    fn add(&mut self, loss: f64, grad_norm: f64, aux: f64, aux2: f64) {
        self.updates += 1;
        self.loss += loss;
        self.grad_norm += grad_norm;
        self.aux += aux;
        self.aux2 += aux2;
    }

    fn finish(mut self) -> Self {
        if self.updates > 0 {
            let n = self.updates as f64;
            self.loss /= n;
            self.grad_norm /= n;
            self.aux /= n;
            self.aux2 /= n;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub policy: NoiseScaleProbe,
    pub value: NoiseScaleProbe,
    pub distil: NoiseScaleProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub discounted_returns: Vec<f64>,
    pub lengths: Vec<usize>,
    pub mean_return: f64,
    pub mean_discounted_return: f64,
}

struct Agent<'a> {
    policy_net: &'a Mlp,
    policy_params: &'a [f64],
    value: Option<(&'a Mlp, &'a [f64])>,
}

fn column(m: &Array2<f64>, j: usize) -> Vec<f64> {
    m.column(j).to_vec()
}

impl ActorCritic for Agent<'_> {
    fn logits(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.policy_net.predict(self.policy_params, obs)?.swap_remove(PI_HEAD))
    }

    fn values(&self, obs: ArrayView2<f64>) -> Result<Vec<f64>> {
        match self.value {
            Some((net, params)) => Ok(column(&net.predict(params, obs)?[0], 0)),
            None => Ok(column(&self.policy_net.predict(self.policy_params, obs)?[AUX_VALUE_HEAD], 0)),
        }
    }
}

fn diverged(phase: &'static str, iteration: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Diverged { phase, iteration },
        other => other,
    }
}

fn check_finite(loss: f64, params: &[f64], phase: &'static str, iteration: usize) -> Result<()> {
    if loss.is_finite() && params.iter().all(|p| p.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { phase, iteration })
    }
}

/// Policy gradient of the clipped surrogate over `idx`, written into
/// `grads`. Returns `(loss, entropy, clip_fraction)`.
fn clip_objective(
    net: &Mlp,
    params: &[f64],
    data: &PhaseData,
    idx: &[usize],
    clip: &ClipConfig,
    value_coef: Option<f64>,
    grads: &mut [f64],
) -> Result<(f64, f64, f64)> {
    let obs = data.obs.select(Axis(0), idx);
    let (outs, cache) = net.forward(params, obs.view())?;
    let out = clip_surrogate_loss(
        outs[PI_HEAD].view(),
        &PhaseData::gather(&data.actions, idx),
        &PhaseData::gather(&data.old_log_probs, idx),
        &PhaseData::gather(&data.advantages, idx),
        clip,
    )?;
    let mut loss = out.loss;
    let mut heads: Vec<Option<ArrayView2<f64>>> = vec![None; outs.len()];
    heads[PI_HEAD] = Some(out.grad_logits.view());
    let v_grad;
    if let Some(c) = value_coef {
        let (vl, g) = value_mse_loss(&column(&outs[AUX_VALUE_HEAD], 0), &PhaseData::gather(&data.value_targets, idx))?;
        loss += c * vl;
        v_grad = Array2::from_shape_fn((idx.len(), 1), |(i, _)| c * g[i]);
        heads[AUX_VALUE_HEAD] = Some(v_grad.view());
    }
    net.backward(params, &cache, &heads, grads)?;
    Ok((loss, out.entropy, out.clip_fraction))
}

/// Value regression gradient for the given head over `idx`.
fn value_objective(
    net: &Mlp,
    params: &[f64],
    head: usize,
    data: &PhaseData,
    idx: &[usize],
    grads: &mut [f64],
) -> Result<f64> {
    let obs = data.obs.select(Axis(0), idx);
    let (outs, cache) = net.forward(params, obs.view())?;
    let (loss, g) = value_mse_loss(&column(&outs[head], 0), &PhaseData::gather(&data.value_targets, idx))?;
    let g = Array2::from_shape_vec((idx.len(), 1), g).expect("column gradient");
    let mut heads: Vec<Option<ArrayView2<f64>>> = vec![None; outs.len()];
    heads[head] = Some(g.view());
    net.backward(params, &cache, &heads, grads)?;
    Ok(loss)
}

/// Distillation gradient on the policy network over `idx`.
/// Returns `(loss, value_loss, kl)`.
fn distil_objective(
    net: &Mlp,
    params: &[f64],
    obs_all: &Array2<f64>,
    targets: &[f64],
    old_logits: &Array2<f64>,
    idx: &[usize],
    cfg: &DistilConfig,
    grads: &mut [f64],
) -> Result<(f64, f64, f64)> {
    let obs = obs_all.select(Axis(0), idx);
    let (outs, cache) = net.forward(params, obs.view())?;
    let old = old_logits.select(Axis(0), idx);
    let out = distillation_loss(
        &column(&outs[AUX_VALUE_HEAD], 0),
        &PhaseData::gather(targets, idx),
        outs[PI_HEAD].view(),
        old.view(),
        cfg,
    )?;
    let g_v = Array2::from_shape_vec((idx.len(), 1), out.grad_value_head).expect("column gradient");
    let heads = [Some(out.grad_logits.view()), Some(g_v.view())];
    net.backward(params, &cache, &heads, grads)?;
    Ok((out.loss, out.value_loss, out.kl))
}

/// All mutable training state. One instance owns every network, optimizer,
/// normalizer, environment and random stream.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub(crate) config: DnaConfig,
    pub(crate) policy_net: Mlp,
    pub(crate) value_net: Option<Mlp>,
    pub(crate) policy: ParameterBlock,
    pub(crate) value: Option<ParameterBlock>,
    pub(crate) distil_adam: AdamState,
    pub(crate) old_policy: Option<ParamSnapshot>,
    pub(crate) venv: VecEnv,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) iteration: usize,
    pub(crate) interactions: u64,
    pub(crate) warmup_interactions: u64,
    pub(crate) episodes_completed: u64,
    pub(crate) recent_returns: VecDeque<f64>,
    pub(crate) probes: ProbeSet,
}

impl TrainerState {
    /// Build networks, environments and optimizers, then run the warmup
    /// desynchronization. Warmup interactions are not charged to the budget.
    pub fn new(config: DnaConfig) -> Result<Self> {
        let mut state = Self::fresh(config)?;
        if state.config.env.warmup {
            let max = state.config.env.resolved_warmup_max()?;
            state.warmup_interactions = state.venv.warmup_desync(max, &mut state.rng)? as u64;
        }
        Ok(state)
    }

    /// Everything initialized, warmup not yet run.
    pub(crate) fn fresh(config: DnaConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(0);
        let venv = VecEnv::new(&config.env, config.agents, config.gamma, config.seed)?;
        let net = &config.network;
        let policy_spec = NetSpec::new(
            venv.obs_dim,
            net.hidden.clone(),
            vec![
                HeadSpec::new("pi", venv.action_count, 0.01),
                HeadSpec::new("v", 1, 1.0),
            ],
            net.activation,
            net.init,
        )?;
        let policy_net = Mlp::new(policy_spec)?;
        let policy = ParameterBlock::new(policy_net.init_params(&mut rng));
        let (value_net, value) = match config.mode {
            Mode::DnaDual => {
                let spec = NetSpec::new(
                    venv.obs_dim,
                    net.hidden.clone(),
                    vec![HeadSpec::new("v", 1, 1.0)],
                    net.activation,
                    net.init,
                )?;
                let value_net = Mlp::new(spec)?;
                let block = ParameterBlock::new(value_net.init_params(&mut rng));
                (Some(value_net), Some(block))
            }
            Mode::PpoJoint => (None, None),
        };
        let b_big = config.noise.b_big.min(config.batch_size());
        let b_small = config.noise.b_small.min(b_big.saturating_sub(1)).max(1);
        let probe = || NoiseScaleProbe::new(b_small, b_big.max(b_small + 1), config.noise.ema_decay);
        let probes = ProbeSet {
            policy: probe()?,
            value: probe()?,
            distil: probe()?,
        };
        Ok(Self {
            distil_adam: AdamState::new(policy.len()),
            policy_net,
            value_net,
            policy,
            value,
            old_policy: None,
            venv,
            rng,
            iteration: 0,
            interactions: 0,
            warmup_interactions: 0,
            episodes_completed: 0,
            recent_returns: VecDeque::with_capacity(RECENT_EPISODES),
            probes,
            config,
        })
    }

    pub fn config(&self) -> &DnaConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn interactions(&self) -> u64 {
        self.interactions
    }

    pub fn warmup_interactions(&self) -> u64 {
        self.warmup_interactions
    }

    pub fn episodes_completed(&self) -> u64 {
        self.episodes_completed
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations()
    }

    pub fn policy_net(&self) -> &Mlp {
        &self.policy_net
    }

    pub fn value_net(&self) -> Option<&Mlp> {
        self.value_net.as_ref()
    }

    pub fn policy_params(&self) -> &[f64] {
        &self.policy.params
    }

    pub fn value_params(&self) -> Option<&[f64]> {
        self.value.as_ref().map(|b| b.params.as_slice())
    }

    pub fn policy_adam(&self) -> &AdamState {
        &self.policy.adam
    }

    pub fn value_adam(&self) -> Option<&AdamState> {
        self.value.as_ref().map(|b| &b.adam)
    }

    pub fn distil_adam(&self) -> &AdamState {
        &self.distil_adam
    }

    pub fn old_policy(&self) -> Option<&ParamSnapshot> {
        self.old_policy.as_ref()
    }

    pub fn probes(&self) -> &ProbeSet {
        &self.probes
    }

    pub fn venv(&self) -> &VecEnv {
        &self.venv
    }

    /// Mean raw return over the last (up to) 100 completed training episodes.
    pub fn recent_mean_return(&self) -> Option<f64> {
        if self.recent_returns.is_empty() {
            None
        } else {
            Some(self.recent_returns.iter().sum::<f64>() / self.recent_returns.len() as f64)
        }
    }

    fn anneal_fraction(&self) -> f64 {
        if self.config.anneal {
            1.0 - self.iteration as f64 / self.config.iterations() as f64
        } else {
            1.0
        }
    }

    fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.config.lr * self.anneal_fraction(),
            beta1: self.config.adam_beta1,
            beta2: self.config.adam_beta2,
            eps: self.config.adam_eps,
        }
    }

    fn clip_config(&self) -> ClipConfig {
        ClipConfig {
            epsilon: self.config.epsilon,
            entropy_coef: self.config.entropy_coef * self.anneal_fraction(),
        }
    }

    fn agent(&self) -> Agent<'_> {
        Agent {
            policy_net: &self.policy_net,
            policy_params: &self.policy.params,
            value: self.value_net.as_ref().zip(self.value.as_ref().map(|b| b.params.as_slice())),
        }
    }

    /// Action logits of the current policy for a batch of normalized observations.
    pub fn policy_logits(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.agent().logits(obs)
    }

    /// Baseline values used for returns: the value network in dual mode,
    /// the shared value head in joint mode.
    pub fn state_values(&self, obs: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.agent().values(obs)
    }

    /// The policy network's own value head.
    pub fn policy_value_head(&self, obs: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(column(&self.policy_net.predict(&self.policy.params, obs)?[AUX_VALUE_HEAD], 0))
    }

    /// Collect one `agents × horizon` rollout with the current policy.
    pub fn collect(&mut self) -> Result<RolloutBatch> {
        let agent = Agent {
            policy_net: &self.policy_net,
            policy_params: &self.policy.params,
            value: self.value_net.as_ref().zip(self.value.as_ref().map(|b| b.params.as_slice())),
        };
        let batch = collect_rollout(
            &mut self.venv,
            &agent,
            self.config.horizon,
            ActionSelection::Sample,
            &mut self.rng,
        )
        .map_err(diverged("rollout", self.iteration))?;
        self.interactions += batch.len() as u64;
        for ep in &batch.episodes {
            if self.recent_returns.len() == RECENT_EPISODES {
                self.recent_returns.pop_front();
            }
            self.recent_returns.push_back(ep.ret);
            self.episodes_completed += 1;
        }
        Ok(batch)
    }

    /// Value targets (TD λ_V), advantages (TD λ_π minus values, normalized)
    /// and flattened inputs. Value estimates are those frozen at collection.
    pub fn prepare(&self, batch: &RolloutBatch) -> Result<PhaseData> {
        let n = batch.len();
        let mut advantages = Vec::with_capacity(n);
        let mut value_targets = Vec::with_capacity(n);
        for env in 0..batch.num_envs {
            let traj = batch.trajectory(env).map_err(diverged("returns", self.iteration))?;
            value_targets.extend(compute_value_targets(&traj, self.config.lambda_v, self.config.gamma)?);
            advantages.extend(compute_advantages(&traj, self.config.lambda_pi, self.config.gamma)?);
        }
        Ok(PhaseData {
            obs: batch.obs_matrix(),
            actions: batch.actions.clone(),
            old_log_probs: batch.behavior_log_probs.clone(),
            advantages: normalize_advantages(&advantages),
            value_targets,
        })
    }

    /// `e_pi` epochs of clipped-surrogate ascent on the policy network.
    pub fn policy_phase(&mut self, data: &PhaseData) -> Result<PhaseStats> {
        let mut stats = PhaseStats::default();
        if self.config.e_pi == 0 {
            return Ok(stats);
        }
        let (clip, adam, it) = (self.clip_config(), self.adam_config(), self.iteration);
        let n = data.len();
        if self.config.noise.enabled {
            let (net, params) = (&self.policy_net, &self.policy.params);
            let mean_grad = |idx: &[usize]| {
                let mut g = vec![0.0; params.len()];
                clip_objective(net, params, data, idx, &clip, None, &mut g)?;
                Ok(g)
            };
            let reading = self.probes.policy.probe(mean_grad, n, &mut self.rng);
            stats.noise = Some(reading.map_err(diverged("policy", it))?);
        }
        for _ in 0..self.config.e_pi {
            for idx in minibatch_iterator(n, self.config.mb_policy, &mut self.rng) {
                let (loss, ent, cf) = clip_objective(
                    &self.policy_net,
                    &self.policy.params,
                    data,
                    &idx,
                    &clip,
                    None,
                    &mut self.policy.grads,
                )
                .map_err(diverged("policy", it))?;
                let norm = clip_global_grad_norm(&mut self.policy.grads, self.config.grad_clip);
                adam_step(&mut self.policy, &adam);
                check_finite(loss, &self.policy.params, "policy", it)?;
                stats.add(loss, norm, ent, cf);
            }
        }
        Ok(stats.finish())
    }

    /// `e_v` epochs of value regression on the value network.
    pub fn value_phase(&mut self, data: &PhaseData) -> Result<PhaseStats> {
        let mut stats = PhaseStats::default();
        let (adam, it) = (self.adam_config(), self.iteration);
        let (Some(net), Some(block)) = (self.value_net.as_ref(), self.value.as_mut()) else {
            return Err(Error::Precondition("value phase needs a separate value network".into()));
        };
        if self.config.e_v == 0 {
            return Ok(stats);
        }
        let n = data.len();
        if self.config.noise.enabled {
            let params = &block.params;
            let mean_grad = |idx: &[usize]| {
                let mut g = vec![0.0; params.len()];
                value_objective(net, params, 0, data, idx, &mut g)?;
                Ok(g)
            };
            let reading = self.probes.value.probe(mean_grad, n, &mut self.rng);
            stats.noise = Some(reading.map_err(diverged("value", it))?);
        }
        for _ in 0..self.config.e_v {
            for idx in minibatch_iterator(n, self.config.mb_value, &mut self.rng) {
                let loss = value_objective(net, &block.params, 0, data, &idx, &mut block.grads)
                    .map_err(diverged("value", it))?;
                let norm = clip_global_grad_norm(&mut block.grads, self.config.grad_clip);
                adam_step(block, &adam);
                check_finite(loss, &block.params, "value", it)?;
                stats.add(loss, norm, 0.0, 0.0);
            }
        }
        Ok(stats.finish())
    }

    /// Snapshot `π_old`, then `e_d` epochs of distillation on the policy
    /// network with its own optimizer. Targets come from the frozen value
    /// network and are recomputed at the start of every epoch.
    pub fn distill_phase(&mut self, data: &PhaseData) -> Result<PhaseStats> {
        let mut stats = PhaseStats::default();
        let (Some(vnet), Some(vblock)) = (self.value_net.as_ref(), self.value.as_ref()) else {
            return Err(Error::Precondition("distillation needs a separate value network".into()));
        };
        self.old_policy = Some(self.policy.snapshot());
        if self.config.e_d == 0 {
            return Ok(stats);
        }
        let (adam, it) = (self.adam_config(), self.iteration);
        let cfg = DistilConfig { beta: self.config.beta };
        let n = data.len();
        let old_logits = self
            .policy_net
            .predict(&self.policy.params, data.obs.view())?
            .swap_remove(PI_HEAD);
        for epoch in 0..self.config.e_d {
            let targets = column(&vnet.predict(&vblock.params, data.obs.view())?[0], 0);
            if epoch == 0 && self.config.noise.enabled {
                let (net, params) = (&self.policy_net, &self.policy.params);
                let mean_grad = |idx: &[usize]| {
                    let mut g = vec![0.0; params.len()];
                    distil_objective(net, params, &data.obs, &targets, &old_logits, idx, &cfg, &mut g)?;
                    Ok(g)
                };
                let reading = self.probes.distil.probe(mean_grad, n, &mut self.rng);
                stats.noise = Some(reading.map_err(diverged("distil", it))?);
            }
            for idx in minibatch_iterator(n, self.config.mb_distil, &mut self.rng) {
                let (loss, vl, kl) = distil_objective(
                    &self.policy_net,
                    &self.policy.params,
                    &data.obs,
                    &targets,
                    &old_logits,
                    &idx,
                    &cfg,
                    &mut self.policy.grads,
                )
                .map_err(diverged("distil", it))?;
                let norm = clip_global_grad_norm(&mut self.policy.grads, self.config.grad_clip);
                self.distil_adam
                    .step(&mut self.policy.params, &self.policy.grads, &adam);
                check_finite(loss, &self.policy.params, "distil", it)?;
                stats.add(loss, norm, vl, kl);
            }
        }
        Ok(stats.finish())
    }

    /// Mean `KL(π_old ‖ π)` over `obs`, against the last snapshot.
    pub fn kl_from_snapshot(&self, obs: ArrayView2<f64>) -> Result<f64> {
        let Some(old) = &self.old_policy else {
            return Err(Error::Precondition("no policy snapshot yet".into()));
        };
        let old_logits = self.policy_net.predict(old.params(), obs)?.swap_remove(PI_HEAD);
        let new_logits = self.policy_logits(obs)?;
        let n = obs.nrows().max(1) as f64;
        let total: f64 = old_logits
            .rows()
            .into_iter()
            .zip(new_logits.rows())
            .map(|(p, q)| {
                CategoricalPolicy::new(&p.to_vec()).kl_to(&CategoricalPolicy::new(&q.to_vec()))
            })
            .sum();
        Ok(total / n)
    }

    /// Joint-network PPO: `e_pi` epochs of `L_CLIP + c·L_VF` on one network.
    pub fn joint_phase(&mut self, data: &PhaseData) -> Result<PhaseStats> {
        let mut stats = PhaseStats::default();
        if self.config.e_pi == 0 {
            return Ok(stats);
        }
        let (clip, adam, it) = (self.clip_config(), self.adam_config(), self.iteration);
        let n = data.len();
        if self.config.noise.enabled {
            let (net, params) = (&self.policy_net, &self.policy.params);
            let policy_grad = |idx: &[usize]| {
                let mut g = vec![0.0; params.len()];
                clip_objective(net, params, data, idx, &clip, None, &mut g)?;
                Ok(g)
            };
            let reading = self.probes.policy.probe(policy_grad, n, &mut self.rng);
            stats.noise = Some(reading.map_err(diverged("joint", it))?);
            let value_grad = |idx: &[usize]| {
                let mut g = vec![0.0; params.len()];
                value_objective(net, params, AUX_VALUE_HEAD, data, idx, &mut g)?;
                Ok(g)
            };
            let reading = self.probes.value.probe(value_grad, n, &mut self.rng);
            stats.noise_aux = Some(reading.map_err(diverged("joint", it))?);
        }
        for _ in 0..self.config.e_pi {
            for idx in minibatch_iterator(n, self.config.mb_policy, &mut self.rng) {
                let (loss, ent, cf) = clip_objective(
                    &self.policy_net,
                    &self.policy.params,
                    data,
                    &idx,
                    &clip,
                    Some(self.config.value_coef),
                    &mut self.policy.grads,
                )
                .map_err(diverged("joint", it))?;
                let norm = clip_global_grad_norm(&mut self.policy.grads, self.config.grad_clip);
                adam_step(&mut self.policy, &adam);
                check_finite(loss, &self.policy.params, "joint", it)?;
                stats.add(loss, norm, ent, cf);
            }
        }
        Ok(stats.finish())
    }

    /// One outer iteration: rollout, targets, then the phases for the mode.
    pub fn run_iteration(&mut self, sink: &mut dyn MetricsSink) -> Result<()> {
        let batch = self.collect()?;
        let data = self.prepare(&batch)?;
        let mut phases: Vec<(&str, PhaseStats)> = Vec::new();
        match self.config.mode {
            Mode::DnaDual => {
                phases.push(("policy", self.policy_phase(&data)?));
                phases.push(("value", self.value_phase(&data)?));
                phases.push(("distil", self.distill_phase(&data)?));
            }
            Mode::PpoJoint => phases.push(("joint", self.joint_phase(&data)?)),
        }
        self.iteration += 1;

        let mut em = Emitter {
            sink,
            iteration: self.iteration,
            interactions: self.interactions,
        };
        em.emit("episodes", self.episodes_completed as f64)?;
        if let Some(r) = self.recent_mean_return() {
            em.emit("episode_return", r)?;
        }
        let mean_raw = batch.raw_rewards.iter().sum::<f64>() / batch.len() as f64;
        em.emit("rollout_reward", mean_raw)?;
        for (name, s) in &phases {
            if s.updates > 0 {
                em.emit(&format!("{name}_loss"), s.loss)?;
                em.emit(&format!("{name}_grad_norm"), s.grad_norm)?;
                match *name {
                    "policy" | "joint" => {
                        em.emit(&format!("{name}_entropy"), s.aux)?;
                        em.emit(&format!("{name}_clip_fraction"), s.aux2)?;
                    }
                    "distil" => {
                        em.emit("distil_value_loss", s.aux)?;
                        em.emit("distil_kl", s.aux2)?;
                    }
                    _ => {}
                }
            }
            let readings = [
                (if *name == "joint" { "policy" } else { name }, s.noise),
                ("value", s.noise_aux),
            ];
            for (probe, reading) in readings {
                let Some(r) = reading else { continue };
                em.emit(&format!("noise_{probe}_g2"), r.ema_g2)?;
                em.emit(&format!("noise_{probe}_s"), r.ema_s)?;
                if let (Some(b), Some(sigma)) = (r.b_simple, r.sigma) {
                    em.emit(&format!("noise_{probe}_b"), b)?;
                    em.emit(&format!("noise_{probe}_sigma"), sigma)?;
                }
            }
        }
        Ok(())
    }

    /// Train until the interaction budget is spent. With a checkpoint
    /// directory, writes `ckpt_NNNNNN.bin` every `checkpoint_every`
    /// iterations, `final.bin` at the end and `diverged.bin` on a
    /// non-finite loss.
    pub fn run(&mut self, sink: &mut dyn MetricsSink, checkpoints: Option<&Path>) -> Result<()> {
        while !self.is_done() {
            if let Err(e) = self.run_iteration(sink) {
                if let (Error::Diverged { .. }, Some(dir)) = (&e, checkpoints) {
                    self.save_checkpoint(&dir.join("diverged.bin"))?;
                }
                sink.flush()?;
                return Err(e);
            }
            let k = self.config.checkpoint_every;
            if let Some(dir) = checkpoints {
                if k > 0 && self.iteration % k == 0 && !self.is_done() {
                    self.save_checkpoint(&dir.join(format!("ckpt_{:06}.bin", self.iteration)))?;
                }
            }
        }
        sink.flush()?;
        if let Some(dir) = checkpoints {
            self.save_checkpoint(&dir.join("final.bin"))?;
        }
        Ok(())
    }

    /// Greedy policy with frozen observation statistics on fresh environments.
    pub fn evaluate(&self, n_episodes: usize) -> Result<EvalReport> {
        self.evaluate_with_seed(n_episodes, self.config.seed ^ EVAL_SEED_OFFSET)
    }

    pub fn evaluate_with_seed(&self, n_episodes: usize, seed: u64) -> Result<EvalReport> {
        if n_episodes == 0 {
            return Err(Error::Precondition("evaluation needs at least one episode".into()));
        }
        let cfg = &self.config.env;
        let timeout = cfg.resolved_timeout()?;
        let mut env = WrappedEnv::new(0, cfg.build_env()?, timeout, cfg.sticky_p, seed);
        let gamma = self.config.gamma;
        let mut report = EvalReport {
            returns: Vec::with_capacity(n_episodes),
            discounted_returns: Vec::with_capacity(n_episodes),
            lengths: Vec::with_capacity(n_episodes),
            mean_return: 0.0,
            mean_discounted_return: 0.0,
        };
        let mut obs = Array2::zeros((1, self.venv.obs_dim));
        while report.returns.len() < n_episodes {
            let mut discount = 1.0;
            let mut discounted = 0.0;
            loop {
                let raw = env.observation();
                self.venv
                    .obs_norm
                    .normalize_into(&raw, obs.row_mut(0).as_slice_mut().expect("contiguous"));
                let logits = self.policy_logits(obs.view())?;
                let action = CategoricalPolicy::new(logits.row(0).as_slice().expect("contiguous")).argmax();
                let step = env.step(action)?;
                discounted += discount * step.raw_reward;
                discount *= gamma;
                if let Some(ep) = step.episode {
                    report.returns.push(ep.ret);
                    report.discounted_returns.push(discounted);
                    report.lengths.push(ep.length);
                    break;
                }
            }
        }
        let n = n_episodes as f64;
        report.mean_return = report.returns.iter().sum::<f64>() / n;
        report.mean_discounted_return = report.discounted_returns.iter().sum::<f64>() / n;
        Ok(report)
    }
}

/// Train from scratch until the budget is spent.
pub fn train(config: DnaConfig, sink: &mut dyn MetricsSink) -> Result<TrainerState> {
    let mut state = TrainerState::new(config)?;
    state.run(sink, None)?;
    Ok(state)
}
