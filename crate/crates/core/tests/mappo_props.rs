mod common;

use std::fs;

use common::*;
use multisoc::config::Config;
use multisoc::humanpol::HumanParams;
use multisoc::mappo::{
    checkpoint_path, collect_rollouts, gae_sequence, minibatch_loss, ppo_update, run_episode, standardize,
    train, GoalSeeker, PpoConfig, RolloutBatch, Targets, ValueNormalizer, VecEnv,
};
use multisoc::numcore::{Adam, AdamHyper, ParamSet, Tape};
use multisoc::policy::{init_params, Hyper};
use multisoc::sim::{generate_scenario, Status};
use proptest::prelude::*;
use rand::Rng as _;

fn small_config(robots: usize, humans: usize) -> Config {
    let mut c = Config::default();
    c.scenario.robots = robots;
    c.scenario.humans = humans;
    c.scenario.seed = 3;
    c.arch.human_node_rnn_size = 8;
    c.arch.edge_selector_emb_size = 8;
    c.arch.edge_selector_num_head = 2;
    c.arch.mha_emb_size = 8;
    c.arch.mha_num_head = 2;
    c.arch.agent_embedding_size = 6;
    c.train.nrolloutthread = 2;
    c.train.episode_length = 10;
    c.train.data_chunk_length = 5;
    c.train.num_env_steps = 60;
    c.train.checkpoint_interval = 20;
    c.train.lr = 1e-3;
    c.train.critic_lr = 1e-3;
    c
}

fn rollout(cfg: &Config, envs: usize, steps: usize, seed: u64) -> (RolloutBatch, ParamSet, Hyper) {
    let hyper = Hyper::from_config(&cfg.arch, &cfg.train);
    let params = init_params(&hyper, &mut rng("mappo-init", 0)).unwrap();
    let mut env = VecEnv::new(&cfg.scenario, envs, hyper.rnn, seed).unwrap();
    let (batch, _) =
        collect_rollouts(&mut env, &params, &hyper, 1.0, steps, &ValueNormalizer::default()).unwrap();
    (batch, params, hyper)
}

#[test]
fn one_env_one_robot_gives_one_transition_per_step() {
    let cfg = small_config(1, 3);
    let (batch, _, _) = rollout(&cfg, 1, 50, 1);
    assert_eq!(batch.num_transitions(), 50);
    assert_eq!(batch.num_sequences(), 1);
    assert_eq!(batch.bootstrap.len(), 1);
}

#[test]
fn every_robot_contributes_its_own_sequence() {
    let cfg = small_config(2, 3);
    let (batch, _, _) = rollout(&cfg, 3, 10, 1);
    assert_eq!(batch.num_transitions(), 3 * 2 * 10);
    for env in 0..3 {
        let a = &batch.obs[batch.index(env, 0, 0)];
        let b = &batch.obs[batch.index(env, 1, 0)];
        assert_ne!(a.graph.agent, b.graph.agent);
        assert!(batch.active[batch.index(env, 0, 0)] && batch.active[batch.index(env, 1, 0)]);
    }
}

#[test]
fn rollouts_are_deterministic() {
    let cfg = small_config(2, 4);
    let (a, _, _) = rollout(&cfg, 2, 20, 9);
    let (b, _, _) = rollout(&cfg, 2, 20, 9);
    assert_eq!(a.obs, b.obs);
    assert_eq!(a.actions, b.actions);
    assert_eq!(a.log_probs, b.log_probs);
    assert_eq!(a.rewards, b.rewards);
    assert_eq!(a.noise_seeds, b.noise_seeds);
    let (c, _, _) = rollout(&cfg, 2, 20, 10);
    assert_ne!(a.actions, c.actions);
}

/// `A_t = Σ_l (γλ)^l δ_{t+l}`, truncated at the first terminal step.
fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], boot: f64, g: f64, l: f64) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for k in t..n {
                let next = if d[k] {
                    0.0
                } else if k + 1 < n {
                    v[k + 1]
                } else {
                    boot
                };
                let delta = r[k] + g * next - v[k];
                total += (g * l).powi((k - t) as i32) * delta;
                if d[k] {
                    break;
                }
            }
            total
        })
        .collect()
}

#[test]
fn gae_matches_explicit_sum() {
    for t in 0..200 {
        let mut r = rng("gae", t);
        let n = 10;
        let rewards: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..1.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| r.random_bool(0.2)).collect();
        let boot = r.random_range(-5.0..5.0);
        let (g, l) = (r.random_range(0.5..1.0), r.random_range(0.0..1.0));
        let (adv, ret) = gae_sequence(&rewards, &values, &dones, boot, g, l);
        let want = gae_oracle(&rewards, &values, &dones, boot, g, l);
        for k in 0..n {
            assert!((adv[k] - want[k]).abs() < 1e-12);
            assert!((ret[k] - (want[k] + values[k])).abs() < 1e-12);
        }
    }
}

fn policy_only(cfg: &Config) -> PpoConfig {
    PpoConfig {
        value_coef: 0.0,
        entropy_coef: 0.0,
        minibatches: 1,
        ..PpoConfig::from_config(&cfg.train)
    }
}

fn loss_value(params: &ParamSet, hyper: &Hyper, batch: &RolloutBatch, t: &Targets, ppo: &PpoConfig) -> f64 {
    let chunks: Vec<usize> = (0..batch.num_sequences()).map(|s| s * batch.len).collect();
    let tape = Tape::new();
    let loss = minibatch_loss(
        &tape,
        params,
        hyper,
        batch,
        t,
        &ValueNormalizer::default(),
        &chunks,
        batch.len,
        ppo,
    )
    .unwrap()
    .unwrap();
    let v = loss.total.value().item();
    v
}

fn random_targets(batch: &RolloutBatch, seed: u64) -> Targets {
    let mut r = rng("targets", seed);
    Targets {
        advantages: (0..batch.num_transitions())
            .map(|_| r.random_range(-1.0..1.0))
            .collect(),
        returns: vec![0.0; batch.num_transitions()],
    }
}

#[test]
fn surrogate_gradient_at_unit_ratio_is_the_policy_gradient() {
    let cfg = small_config(2, 3);
    let (batch, params, hyper) = rollout(&cfg, 2, 10, 4);
    let ppo = policy_only(&cfg);
    let targets = random_targets(&batch, 0);
    let chunks: Vec<usize> = (0..batch.num_sequences()).map(|s| s * batch.len).collect();
    let tape = Tape::new();
    let loss = minibatch_loss(
        &tape,
        &params,
        &hyper,
        &batch,
        &targets,
        &ValueNormalizer::default(),
        &chunks,
        batch.len,
        &ppo,
    )
    .unwrap()
    .unwrap();
    assert!(loss.approx_kl.abs() < 1e-12);
    assert_eq!(loss.clip_fraction, 0.0);
    let mut with_grads = params.clone();
    tape.backward(loss.total)
        .unwrap()
        .accumulate_into(&mut with_grads)
        .unwrap();
    // Layers after the hard selection have exact gradients; compare them to
    // central differences of the loss.
    let h = 1e-6;
    for name in ["actor.w", "actor.b", "log_std", "critic.w"] {
        let g = with_grads.grad(name).unwrap();
        let p = params.get(name).unwrap();
        for k in 0..p.len() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[k] += h;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[k] -= h;
            let fd = (loss_value(&plus, &hyper, &batch, &targets, &ppo)
                - loss_value(&minus, &hyper, &batch, &targets, &ppo))
                / (2.0 * h);
            let got = g.data()[k];
            assert!(
                (fd - got).abs() <= 1e-6 * fd.abs().max(1e-3),
                "{name}[{k}]: {got} vs {fd}"
            );
        }
    }
}

#[test]
fn saturated_clip_blocks_the_policy_gradient() {
    let cfg = small_config(2, 3);
    let (mut batch, params, hyper) = rollout(&cfg, 2, 10, 5);
    let ppo = policy_only(&cfg);
    // Ratio e > 1 + clip everywhere, all advantages positive.
    for lp in batch.log_probs.iter_mut() {
        *lp -= 1.0;
    }
    let targets = Targets {
        advantages: vec![1.0; batch.num_transitions()],
        returns: vec![0.0; batch.num_transitions()],
    };
    let chunks: Vec<usize> = (0..batch.num_sequences()).map(|s| s * batch.len).collect();
    let tape = Tape::new();
    let loss = minibatch_loss(
        &tape,
        &params,
        &hyper,
        &batch,
        &targets,
        &ValueNormalizer::default(),
        &chunks,
        batch.len,
        &ppo,
    )
    .unwrap()
    .unwrap();
    assert_eq!(loss.clip_fraction, 1.0);
    let mut with_grads = params.clone();
    tape.backward(loss.total)
        .unwrap()
        .accumulate_into(&mut with_grads)
        .unwrap();
    for name in params.names() {
        if let Some(g) = with_grads.grad(name) {
            assert!(g.data().iter().all(|&x| x == 0.0), "{name}");
        }
    }
}

#[test]
fn surrogate_does_not_decrease_over_epochs() {
    let cfg = small_config(2, 3);
    let (batch, mut params, hyper) = rollout(&cfg, 4, 10, 6);
    let ppo = PpoConfig {
        epochs: 5,
        lr: 1e-3,
        chunk_len: 10,
        ..policy_only(&cfg)
    };
    let mut adam = Adam::new(AdamHyper::default());
    let mut norm = ValueNormalizer::default();
    let stats = ppo_update(
        &mut params,
        &mut adam,
        &hyper,
        &batch,
        &mut norm,
        &ppo,
        &mut rng("ppo", 0),
    )
    .unwrap();
    assert_eq!(stats.surrogate_per_epoch.len(), 5);
    for w in stats.surrogate_per_epoch.windows(2) {
        assert!(w[1] >= w[0] - 1e-12, "{:?}", stats.surrogate_per_epoch);
    }
    assert!(stats.surrogate_per_epoch[4] > stats.surrogate_per_epoch[0]);
}

#[test]
fn normalizer_tracks_running_moments() {
    let mut r = rng("norm", 0);
    let mut norm = ValueNormalizer::default();
    let mut all = Vec::new();
    for _ in 0..20 {
        let xs: Vec<f64> = (0..r.random_range(1..50))
            .map(|_| r.random_range(-30.0..10.0))
            .collect();
        norm.update(&xs);
        all.extend(xs);
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    assert!((norm.mean - mean).abs() < 1e-9);
    assert!((norm.var() - var).abs() < 1e-9 * var);
    for &x in &all {
        assert!((norm.denormalize(norm.normalize(x)) - x).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn standardized_advantages_have_zero_mean_unit_std(
        xs in prop::collection::vec((-100.0f64..100.0, any::<bool>()), 2..200)
    ) {
        let (mut adv, mask): (Vec<f64>, Vec<bool>) = xs.into_iter().unzip();
        let active: Vec<f64> = adv.iter().zip(&mask).filter(|(_, &m)| m).map(|(a, _)| *a).collect();
        let spread = active.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - active.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(active.len() >= 2 && spread > 1e-3);
        standardize(&mut adv, &mask);
        let vals: Vec<f64> = adv.iter().zip(&mask).filter(|(_, &m)| m).map(|(a, _)| *a).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((std - 1.0).abs() < 1e-9);
        prop_assert!(adv.iter().zip(&mask).all(|(a, &m)| m || *a == 0.0));
    }
}

#[test]
fn reaching_the_goal_earns_no_bonus() {
    let mut cfg = small_config(1, 0).scenario;
    cfg.max_episode_steps = 200;
    let human = HumanParams::from_config(&cfg);
    for s in 0..20 {
        let world = generate_scenario(&cfg, rng("bonus", s)).unwrap();
        let d0 = world.entities[0].goal_distance();
        let log = run_episode(world, &mut GoalSeeker, &human).unwrap();
        let last = log.records.last().unwrap();
        assert_eq!(last.entities[0].status, Status::Reached);
        let finish = log
            .records
            .iter()
            .position(|r| r.entities[0].status == Status::Reached)
            .unwrap();
        // Progress rewards telescope to the distance covered.
        let covered = d0 - log.records[finish].entities[0].goal_distance();
        assert!((log.cumulative_reward(0) - covered).abs() < 1e-9);
        let step = cfg.robot_v_pref * cfg.dt;
        assert!(log.records[finish].rewards[0].unwrap() <= step + 1e-12);
    }
}

#[test]
fn zero_step_budget_writes_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(1, 2);
    cfg.train.num_env_steps = 0;
    let s = train(&cfg, dir.path(), None).unwrap();
    assert_eq!(s.steps, 0);
    assert_eq!(s.checkpoints, vec![checkpoint_path(dir.path(), 0)]);
    let curve = fs::read_to_string(&s.curve).unwrap();
    assert_eq!(curve.lines().count(), 1);
}

#[test]
fn training_resumes_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(2, 2);
    let first = train(&cfg, dir.path(), None).unwrap();
    assert_eq!(first.steps, 60);
    cfg.train.num_env_steps = 100;
    let last = first.checkpoints.last().unwrap().clone();
    let second = train(&cfg, dir.path(), Some(&last)).unwrap();
    assert_eq!(second.steps, 100);
    let curve = fs::read_to_string(&second.curve).unwrap();
    let steps: Vec<u64> = curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(steps, vec![20, 40, 60, 80, 100]);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let s = train(&small_config(2, 3), dir.path(), None).unwrap();
        let curve = fs::read_to_string(&s.curve).unwrap();
        let ckpt = fs::read(s.checkpoints.last().unwrap()).unwrap();
        (curve, ckpt)
    };
    assert_eq!(run(), run());
}
