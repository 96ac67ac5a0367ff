use serde::{Deserialize, Serialize};

use crate::numcore::Tensor;
use crate::percept::Observation;

/// Transitions of every robot in every environment over one rollout,
/// indexed `(env, agent, t)` with `t` fastest.
///
/// Entries where the robot had already finished are kept as padding with
/// `active = false`, zero reward and `done = true`, so every sequence has
/// the same length.
#[derive(Clone, Debug)]
pub struct RolloutBatch {
    pub num_envs: usize,
    pub num_agents: usize,
    pub len: usize,
    pub obs: Vec<Observation>,
    pub actions: Vec<[f64; 2]>,
    pub log_probs: Vec<f64>,
    /// Denormalized value predictions.
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// The robot's episode ended with this transition.
    pub dones: Vec<bool>,
    pub active: Vec<bool>,
    /// Hidden state was reset right before this step.
    pub episode_starts: Vec<bool>,
    /// Hidden state fed to the policy at this step, `[rnn]` each.
    pub hidden: Vec<Vec<f64>>,
    /// Seed of the Gumbel noise used for edge selection at this step.
    pub noise_seeds: Vec<u64>,
    /// Value of the state after the last step, per `(env, agent)`.
    pub bootstrap: Vec<f64>,
    /// Gumbel temperature used while collecting.
    pub tau: f64,
}

impl RolloutBatch {
    pub fn index(&self, env: usize, agent: usize, t: usize) -> usize {
        (env * self.num_agents + agent) * self.len + t
    }

    pub fn num_sequences(&self) -> usize {
        self.num_envs * self.num_agents
    }

    pub fn num_transitions(&self) -> usize {
        self.obs.len()
    }

    pub fn num_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Starting hidden state of a chunk as a `[1, rnn]` row.
    pub fn hidden_row(&self, idx: usize) -> Tensor {
        Tensor::row(&self.hidden[idx])
    }
}

/// Generalized advantage estimation along one sequence. `values` and
/// `bootstrap` are in return units.
pub fn gae_sequence(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut running = 0.0;
    for t in (0..n).rev() {
        let nonterminal = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * nonterminal - values[t];
        running = delta + gamma * lambda * nonterminal * running;
        adv[t] = running;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Advantages and return targets for a whole batch, laid out like the batch.
pub fn gae(batch: &RolloutBatch, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let mut adv = Vec::with_capacity(batch.num_transitions());
    let mut ret = Vec::with_capacity(batch.num_transitions());
    for s in 0..batch.num_sequences() {
        let r = s * batch.len..(s + 1) * batch.len;
        let (a, g) = gae_sequence(
            &batch.rewards[r.clone()],
            &batch.values[r.clone()],
            &batch.dones[r],
            batch.bootstrap[s],
            gamma,
            lambda,
        );
        adv.extend(a);
        ret.extend(g);
    }
    (adv, ret)
}

/// Standardizes `adv` over the entries flagged in `mask`; others become 0.
pub fn standardize(adv: &mut [f64], mask: &[bool]) {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        adv.fill(0.0);
        return;
    }
    let mean = adv
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(a, _)| a)
        .sum::<f64>()
        / n as f64;
    let var = adv
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(a, _)| (a - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt().max(1e-8);
    for (a, &m) in adv.iter_mut().zip(mask) {
        *a = if m { (*a - mean) / std } else { 0.0 };
    }
}

/// Running mean and variance of return targets; the critic predicts
/// normalized values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueNormalizer {
    pub mean: f64,
    /// Sum of squared deviations.
    pub m2: f64,
    pub count: f64,
    pub var_floor: f64,
}

impl Default for ValueNormalizer {
    fn default() -> Self {
        Self {
            mean: 0.0,
            m2: 0.0,
            count: 0.0,
            var_floor: 1e-4,
        }
    }
}

impl ValueNormalizer {
    pub fn var(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / self.count).max(self.var_floor)
        }
    }

    pub fn std(&self) -> f64 {
        self.var().sqrt()
    }

    /// Merges a batch of samples (Chan et al. parallel update).
    pub fn update(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        let total = self.count + n;
        let delta = mean - self.mean;
        self.mean += delta * n / total;
        self.m2 += m2 + delta * delta * self.count * n / total;
        self.count = total;
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std()
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        y * self.std() + self.mean
    }
}
