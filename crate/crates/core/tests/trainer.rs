use std::collections::BTreeSet;

use dna_core::env::{EnvConfig, EnvKind};
use dna_core::nn::categorical::log_softmax;
use dna_core::trainer::*;
use dna_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(kind: EnvKind) -> DnaConfig {
    DnaConfig {
        total_interactions: 1024,
        gamma: 0.95,
        lr: 1e-3,
        agents: 4,
        horizon: 32,
        mb_policy: 32,
        mb_value: 32,
        mb_distil: 32,
        network: NetworkConfig {
            hidden: vec![16, 16],
            ..Default::default()
        },
        noise: NoiseConfig {
            b_small: 8,
            b_big: 64,
            ..Default::default()
        },
        env: EnvConfig {
            kind,
            ..Default::default()
        },
        ..DnaConfig::default()
    }
}

fn batch(state: &mut TrainerState) -> PhaseData {
    let b = state.collect().unwrap();
    state.prepare(&b).unwrap()
}

fn value_mse(state: &TrainerState, data: &PhaseData) -> f64 {
    let v = state.state_values(data.obs.view()).unwrap();
    v.iter().zip(&data.value_targets).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / v.len() as f64
}

#[test]
fn minibatches_partition_every_index_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let parts = minibatch_iterator(128, 32, &mut rng);
    assert_eq!(parts.len(), 4);
    let all: BTreeSet<usize> = parts.iter().flatten().copied().collect();
    assert_eq!(all.len(), 128);
    assert_eq!(*all.iter().last().unwrap(), 127);

    let whole = minibatch_iterator(128, 128, &mut rng);
    assert_eq!(whole.len(), 1);

    let a = minibatch_iterator(100, 10, &mut ChaCha8Rng::seed_from_u64(9));
    let b = minibatch_iterator(100, 10, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);
}

#[test]
fn partial_minibatch_is_dropped() {
    let parts = minibatch_iterator(100, 32, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(parts.len(), 3);
    assert!(parts.iter().all(|p| p.len() == 32));
}

#[test]
fn zero_epochs_leave_parameters_alone() {
    let cfg = DnaConfig {
        e_pi: 0,
        e_v: 0,
        e_d: 0,
        ..tiny(EnvKind::Gridworld)
    };
    let mut state = TrainerState::new(cfg).unwrap();
    let (p0, v0) = (state.policy_params().to_vec(), state.value_params().unwrap().to_vec());
    state.run_iteration(&mut NullSink).unwrap();
    assert_eq!(state.policy_params(), &p0[..]);
    assert_eq!(state.value_params().unwrap(), &v0[..]);
    assert_eq!(state.interactions(), 128);
    assert_eq!(state.old_policy().unwrap().params(), &p0[..]);
}

#[test]
fn phases_touch_only_their_network() {
    let mut state = TrainerState::new(tiny(EnvKind::Cartpole)).unwrap();
    let data = batch(&mut state);

    let v0 = state.value_params().unwrap().to_vec();
    let p0 = state.policy_params().to_vec();
    state.policy_phase(&data).unwrap();
    assert_eq!(state.value_params().unwrap(), &v0[..]);
    assert_ne!(state.policy_params(), &p0[..]);

    let p1 = state.policy_params().to_vec();
    state.value_phase(&data).unwrap();
    assert_eq!(state.policy_params(), &p1[..]);
    assert_ne!(state.value_params().unwrap(), &v0[..]);

    let v1 = state.value_params().unwrap().to_vec();
    state.distill_phase(&data).unwrap();
    assert_eq!(state.value_params().unwrap(), &v1[..]);
    assert_ne!(state.policy_params(), &p1[..]);
    assert_eq!(state.old_policy().unwrap().params(), &p1[..]);
}

#[test]
fn behavior_log_probs_match_current_policy() {
    let mut state = TrainerState::new(tiny(EnvKind::Cartpole)).unwrap();
    let data = batch(&mut state);
    let logits = state.policy_logits(data.obs.view()).unwrap();
    for (i, &a) in data.actions.iter().enumerate() {
        let lp = log_softmax(logits.row(i).as_slice().unwrap())[a];
        assert!((lp - data.old_log_probs[i]).abs() < 1e-12);
    }
}

#[test]
fn zero_advantages_without_entropy_bonus_do_nothing() {
    let cfg = DnaConfig {
        entropy_coef: 0.0,
        ..tiny(EnvKind::Cartpole)
    };
    let mut state = TrainerState::new(cfg).unwrap();
    let mut data = batch(&mut state);
    data.advantages.iter_mut().for_each(|a| *a = 0.0);
    let p0 = state.policy_params().to_vec();
    let stats = state.policy_phase(&data).unwrap();
    assert_eq!(stats.loss, 0.0);
    assert_eq!(state.policy_params(), &p0[..]);
}

#[test]
fn value_targets_already_met_give_zero_loss() {
    let mut state = TrainerState::new(tiny(EnvKind::Cartpole)).unwrap();
    let mut data = batch(&mut state);
    data.value_targets = state.state_values(data.obs.view()).unwrap();
    let v0 = state.value_params().unwrap().to_vec();
    let stats = state.value_phase(&data).unwrap();
    assert_eq!(stats.loss, 0.0);
    assert_eq!(state.value_params().unwrap(), &v0[..]);
}

#[test]
fn value_loss_falls_every_epoch_at_small_lr() {
    let cfg = DnaConfig {
        lr: 1e-4,
        e_v: 1,
        ..tiny(EnvKind::Cartpole)
    };
    let mut state = TrainerState::new(cfg).unwrap();
    let data = batch(&mut state);
    let mut prev = value_mse(&state, &data);
    for _ in 0..8 {
        state.value_phase(&data).unwrap();
        let now = value_mse(&state, &data);
        assert!(now < prev, "{now} !< {prev}");
        prev = now;
    }
}

#[test]
fn huge_beta_pins_the_policy() {
    let cfg = DnaConfig {
        beta: 1e6,
        ..tiny(EnvKind::Cartpole)
    };
    let mut state = TrainerState::new(cfg).unwrap();
    let data = batch(&mut state);
    state.policy_phase(&data).unwrap();
    state.value_phase(&data).unwrap();
    state.distill_phase(&data).unwrap();
    let kl = state.kl_from_snapshot(data.obs.view()).unwrap();
    assert!(kl < 1e-6, "kl {kl}");
}

#[test]
fn no_distil_ablation_keeps_policy_after_snapshot() {
    let cfg = DnaConfig {
        e_d: 0,
        ..tiny(EnvKind::Cartpole)
    };
    let mut state = TrainerState::new(cfg).unwrap();
    let data = batch(&mut state);
    state.policy_phase(&data).unwrap();
    let p = state.policy_params().to_vec();
    let stats = state.distill_phase(&data).unwrap();
    assert_eq!(stats.updates, 0);
    assert_eq!(state.policy_params(), &p[..]);
    assert_eq!(state.kl_from_snapshot(data.obs.view()).unwrap(), 0.0);
}

#[test]
fn joint_mode_has_no_value_network() {
    let cfg = DnaConfig {
        mode: Mode::PpoJoint,
        e_d: 0,
        ..tiny(EnvKind::Cartpole)
    };
    let mut state = TrainerState::new(cfg).unwrap();
    assert!(state.value_net().is_none());
    let data = batch(&mut state);
    assert!(matches!(state.value_phase(&data), Err(Error::Precondition(_))));
    let p0 = state.policy_params().to_vec();
    let stats = state.joint_phase(&data).unwrap();
    assert!(stats.noise.is_some() && stats.noise_aux.is_some());
    assert_ne!(state.policy_params(), &p0[..]);
    let mut sink = Vec::new();
    state.run_iteration(&mut sink).unwrap();
    assert!(sink.iter().any(|r| r.metric == "joint_loss"));
    assert!(sink.iter().any(|r| r.metric == "noise_value_s"));
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut sink: Vec<MetricRecord> = Vec::new();
        let state = train(tiny(EnvKind::Gridworld), &mut sink).unwrap();
        (sink, state.to_checkpoint_bytes())
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    assert!(a.iter().any(|r| r.metric == "noise_distil_s"));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let cfg = tiny(EnvKind::Cartpole);
    let mut full_sink: Vec<MetricRecord> = Vec::new();
    let full = train(cfg.clone(), &mut full_sink).unwrap();

    let mut first = TrainerState::new(cfg).unwrap();
    let mut sink: Vec<MetricRecord> = Vec::new();
    for _ in 0..3 {
        first.run_iteration(&mut sink).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.bin");
    first.save_checkpoint(&path).unwrap();
    drop(first);
    let mut resumed = TrainerState::load_checkpoint(&path).unwrap();
    assert_eq!(resumed.iteration(), 3);
    resumed.run(&mut sink, None).unwrap();

    assert_eq!(sink, full_sink);
    assert_eq!(resumed.to_checkpoint_bytes(), full.to_checkpoint_bytes());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let state = TrainerState::new(tiny(EnvKind::Gridworld)).unwrap();
    let bytes = state.to_checkpoint_bytes();
    assert!(TrainerState::from_checkpoint_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(TrainerState::from_checkpoint_bytes(&bad).is_err());
    let mut long = bytes;
    long.push(0);
    assert!(TrainerState::from_checkpoint_bytes(&long).is_err());
}

#[test]
fn greedy_evaluation_is_repeatable() {
    let mut state = TrainerState::new(tiny(EnvKind::Gridworld)).unwrap();
    state.run_iteration(&mut NullSink).unwrap();
    let a = state.evaluate(5).unwrap();
    let b = state.evaluate(5).unwrap();
    assert_eq!(a, b);
    // deterministic env, argmax policy: every episode is the same
    assert!(a.returns.iter().all(|r| *r == a.returns[0]));

    let one = state.evaluate(1).unwrap();
    assert_eq!(one.returns.len(), 1);
    assert_eq!(one.mean_return, one.returns[0]);
    assert!(matches!(state.evaluate(0), Err(Error::Precondition(_))));
}

#[test]
fn budget_is_respected_and_warmup_is_free() {
    let state = train(tiny(EnvKind::Cartpole), &mut NullSink).unwrap();
    assert_eq!(state.interactions(), 1024);
    assert_eq!(state.iteration(), 8);
    assert!(state.warmup_interactions() > 0);
}
