use rand::{Rng as _, SeedableRng};
use rayon::prelude::*;

use super::{MappoError, RolloutBatch, ValueNormalizer};
use crate::config::ScenarioConfig;
use crate::geom::Vec2;
use crate::humanpol::HumanParams;
use crate::numcore::{ParamSet, Tensor};
use crate::percept::{build_observation, Observation, Predictions};
use crate::policy::{edge_noise_from_seed, forward_with_noise, ActionMode, Hyper};
use crate::rng::{indexed_stream, Rng};
use crate::sim::{generate_scenario, Status, World};

/// Outcome of one finished episode, per robot.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub env: usize,
    pub returns: Vec<f64>,
    pub statuses: Vec<Status>,
}

/// One environment instance with its recurrent state.
#[derive(Clone, Debug)]
pub struct EnvWorker {
    pub index: usize,
    pub world: World,
    pub predictions: Predictions,
    pub hidden: Vec<Vec<f64>>,
    pub episode_start: Vec<bool>,
    pub returns: Vec<f64>,
    pub rng: Rng,
}

impl EnvWorker {
    fn new(index: usize, cfg: &ScenarioConfig, rnn: usize, rng: Rng) -> Result<Self, MappoError> {
        let mut w = Self {
            index,
            world: generate_scenario(cfg, Rng::seed_from_u64(0))?,
            predictions: Predictions { poses: Vec::new() },
            hidden: Vec::new(),
            episode_start: Vec::new(),
            returns: Vec::new(),
            rng,
        };
        w.reset(cfg, rnn)?;
        Ok(w)
    }

    fn reset(&mut self, cfg: &ScenarioConfig, rnn: usize) -> Result<(), MappoError> {
        let seed = self.rng.random::<u64>();
        self.world = generate_scenario(cfg, Rng::seed_from_u64(seed)).map_err(|e| MappoError::Env {
            env: self.index,
            source: e,
        })?;
        self.predictions = Predictions::from_world(&self.world);
        let r = self.world.num_robots();
        self.hidden = vec![vec![0.0; rnn]; r];
        self.episode_start = vec![true; r];
        self.returns = vec![0.0; r];
        Ok(())
    }
}

/// Parallel environments sharing one scenario config.
#[derive(Clone, Debug)]
pub struct VecEnv {
    pub workers: Vec<EnvWorker>,
    pub scenario: ScenarioConfig,
    pub human: HumanParams,
    pub rnn: usize,
}

impl VecEnv {
    /// Environment `i` draws all its randomness from stream `("env", i)`.
    pub fn new(cfg: &ScenarioConfig, num_envs: usize, rnn: usize, seed: u64) -> Result<Self, MappoError> {
        let workers = (0..num_envs)
            .map(|i| EnvWorker::new(i, cfg, rnn, indexed_stream(seed, "env", i as u64)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            workers,
            scenario: cfg.clone(),
            human: HumanParams::from_config(cfg),
            rnn,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.scenario.robots
    }
}

/// Per-worker sequences, `[agent][t]`.
#[derive(Default)]
struct Trace {
    obs: Vec<Vec<Observation>>,
    actions: Vec<Vec<[f64; 2]>>,
    log_probs: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    rewards: Vec<Vec<f64>>,
    dones: Vec<Vec<bool>>,
    active: Vec<Vec<bool>>,
    starts: Vec<Vec<bool>>,
    hidden: Vec<Vec<Vec<f64>>>,
    seeds: Vec<Vec<u64>>,
    bootstrap: Vec<f64>,
    episodes: Vec<EpisodeSummary>,
}

struct Shared<'a> {
    params: &'a ParamSet,
    hyper: &'a Hyper,
    tau: f64,
    norm: &'a ValueNormalizer,
    scenario: &'a ScenarioConfig,
    human: &'a HumanParams,
    rnn: usize,
}

fn stack_hidden(rows: &[&Vec<f64>], rnn: usize) -> Tensor {
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Tensor::new(vec![rows.len(), rnn], data).expect("hidden rows")
}

fn run_worker(w: &mut EnvWorker, sh: &Shared<'_>, steps: usize) -> Result<Trace, MappoError> {
    let r = sh.scenario.robots;
    let mut tr = Trace {
        obs: vec![Vec::with_capacity(steps); r],
        actions: vec![Vec::with_capacity(steps); r],
        log_probs: vec![Vec::with_capacity(steps); r],
        values: vec![Vec::with_capacity(steps); r],
        rewards: vec![Vec::with_capacity(steps); r],
        dones: vec![Vec::with_capacity(steps); r],
        active: vec![Vec::with_capacity(steps); r],
        starts: vec![Vec::with_capacity(steps); r],
        hidden: vec![Vec::with_capacity(steps); r],
        seeds: vec![Vec::with_capacity(steps); r],
        ..Trace::default()
    };
    let env = w.index;
    let wrap = |e| MappoError::Env { env, source: e };
    for _ in 0..steps {
        let obs: Vec<Observation> = (0..r)
            .map(|j| build_observation(&w.world, j, &w.predictions))
            .collect();
        let act_ids: Vec<usize> = (0..r).filter(|&j| w.world.entities[j].is_active()).collect();
        let seeds: Vec<u64> = act_ids.iter().map(|_| w.rng.random()).collect();
        let mut out = None;
        if !act_ids.is_empty() {
            let o: Vec<&Observation> = act_ids.iter().map(|&j| &obs[j]).collect();
            let h = stack_hidden(&act_ids.iter().map(|&j| &w.hidden[j]).collect::<Vec<_>>(), sh.rnn);
            let n = o[0].graph.num_nodes();
            let noise: Vec<Tensor> = seeds
                .iter()
                .map(|&s| edge_noise_from_seed(n, sh.hyper.edge_heads, s))
                .collect();
            let refs: Vec<&Tensor> = noise.iter().collect();
            out = Some(forward_with_noise(
                &o,
                &h,
                sh.params,
                sh.hyper,
                sh.tau,
                &refs,
                &mut w.rng,
                ActionMode::Sample,
            )?);
        }
        let actions: Vec<(usize, Vec2)> = match &out {
            Some(o) => act_ids
                .iter()
                .enumerate()
                .map(|(b, &j)| (j, Vec2::new(o.action.get(b, 0), o.action.get(b, 1))))
                .collect(),
            None => Vec::new(),
        };
        let step = w.world.step(&actions, sh.human).map_err(wrap)?;
        let terminal = w.world.is_terminal();

        for (j, ob) in obs.into_iter().enumerate() {
            let b = act_ids.iter().position(|&a| a == j);
            tr.obs[j].push(ob);
            tr.starts[j].push(w.episode_start[j]);
            tr.hidden[j].push(w.hidden[j].clone());
            match (b, &out) {
                (Some(b), Some(o)) => {
                    let reward = step.reward_of(j).unwrap_or(0.0);
                    w.returns[j] += reward;
                    tr.actions[j].push([o.action.get(b, 0), o.action.get(b, 1)]);
                    tr.log_probs[j].push(o.log_prob[b]);
                    tr.values[j].push(sh.norm.denormalize(o.value[b]));
                    tr.rewards[j].push(reward);
                    tr.dones[j].push(terminal || !w.world.entities[j].is_active());
                    tr.active[j].push(true);
                    tr.seeds[j].push(seeds[b]);
                    w.hidden[j] = o.hidden.row_slice(b).to_vec();
                    w.episode_start[j] = false;
                }
                _ => {
                    tr.actions[j].push([0.0; 2]);
                    tr.log_probs[j].push(0.0);
                    tr.values[j].push(0.0);
                    tr.rewards[j].push(0.0);
                    tr.dones[j].push(true);
                    tr.active[j].push(false);
                    tr.seeds[j].push(0);
                }
            }
        }
        w.predictions = step.predictions;

        if terminal {
            tr.episodes.push(EpisodeSummary {
                env,
                returns: w.returns.clone(),
                statuses: w.world.robots().map(|e| e.status).collect(),
            });
            w.reset(sh.scenario, sh.rnn)?;
        }
    }

    // Bootstrap values of the state reached after the last step.
    let act_ids: Vec<usize> = (0..r).filter(|&j| w.world.entities[j].is_active()).collect();
    tr.bootstrap = vec![0.0; r];
    if !act_ids.is_empty() {
        let obs: Vec<Observation> = act_ids
            .iter()
            .map(|&j| build_observation(&w.world, j, &w.predictions))
            .collect();
        let o: Vec<&Observation> = obs.iter().collect();
        let h = stack_hidden(&act_ids.iter().map(|&j| &w.hidden[j]).collect::<Vec<_>>(), sh.rnn);
        let n = o[0].graph.num_nodes();
        let noise: Vec<Tensor> = act_ids
            .iter()
            .map(|_| edge_noise_from_seed(n, sh.hyper.edge_heads, w.rng.random()))
            .collect();
        let refs: Vec<&Tensor> = noise.iter().collect();
        // A throwaway rng keeps the worker stream independent of this pass.
        let mut scratch = Rng::seed_from_u64(0);
        let out = forward_with_noise(
            &o,
            &h,
            sh.params,
            sh.hyper,
            sh.tau,
            &refs,
            &mut scratch,
            ActionMode::Deterministic,
        )?;
        for (b, &j) in act_ids.iter().enumerate() {
            tr.bootstrap[j] = sh.norm.denormalize(out.value[b]);
        }
    }
    Ok(tr)
}

/// Steps every environment `steps` times with the shared policy and
/// gathers the transitions of all robots. Finished episodes are reset in
/// place; their summaries are returned in environment order.
pub fn collect_rollouts(
    envs: &mut VecEnv,
    params: &ParamSet,
    hyper: &Hyper,
    tau: f64,
    steps: usize,
    norm: &ValueNormalizer,
) -> Result<(RolloutBatch, Vec<EpisodeSummary>), MappoError> {
    let shared = Shared {
        params,
        hyper,
        tau,
        norm,
        scenario: &envs.scenario,
        human: &envs.human,
        rnn: envs.rnn,
    };
    let traces: Vec<Trace> = envs
        .workers
        .par_iter_mut()
        .map(|w| run_worker(w, &shared, steps))
        .collect::<Result<_, _>>()?;

    let num_agents = envs.scenario.robots;
    let total = traces.len() * num_agents * steps;
    let mut batch = RolloutBatch {
        num_envs: traces.len(),
        num_agents,
        len: steps,
        obs: Vec::with_capacity(total),
        actions: Vec::with_capacity(total),
        log_probs: Vec::with_capacity(total),
        values: Vec::with_capacity(total),
        rewards: Vec::with_capacity(total),
        dones: Vec::with_capacity(total),
        active: Vec::with_capacity(total),
        episode_starts: Vec::with_capacity(total),
        hidden: Vec::with_capacity(total),
        noise_seeds: Vec::with_capacity(total),
        bootstrap: Vec::with_capacity(traces.len() * num_agents),
        tau,
    };
    let mut episodes = Vec::new();
    for tr in traces {
        for j in 0..num_agents {
            batch.obs.extend(tr.obs[j].iter().cloned());
            batch.actions.extend(&tr.actions[j]);
            batch.log_probs.extend(&tr.log_probs[j]);
            batch.values.extend(&tr.values[j]);
            batch.rewards.extend(&tr.rewards[j]);
            batch.dones.extend(&tr.dones[j]);
            batch.active.extend(&tr.active[j]);
            batch.episode_starts.extend(&tr.starts[j]);
            batch.hidden.extend(tr.hidden[j].iter().cloned());
            batch.noise_seeds.extend(&tr.seeds[j]);
            batch.bootstrap.push(tr.bootstrap[j]);
        }
        episodes.extend(tr.episodes);
    }
    Ok((batch, episodes))
}
