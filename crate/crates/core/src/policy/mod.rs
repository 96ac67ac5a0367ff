//! The navigation network: edge selection over the visibility graph, graph
//! attention over the selected edges, fusion with the robot's own state, a
//! GRU core and separate action and value heads.
//!
//! All functions work on stacked batches of `B` graphs with the same node
//! count `N`; node `i` of graph `b` is row `b·N + i`.

mod network;

use std::f64::consts::PI;
use std::rc::Rc;

use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

pub use network::{crowd_coordinator, edge_selector, intrinsic_coordinator, SparseGraph};

use crate::config::{ArchConfig, TrainConfig};
use crate::numcore::{
    gumbel_noise, init_gru, init_linear, Gru, Linear, NumError, ParamSet, Tape, Tensor, Var,
};
use crate::percept::{Observation, INTRINSIC_DIM, NODE_DIM};
use crate::rng::Rng;

/// Dimension of the velocity command.
pub const ACTION_DIM: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("non-finite values after {0}")]
    NonFinite(&'static str),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Architecture sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyper {
    /// Edge-selector heads, also the out-degree bound of the sparse graph.
    pub edge_heads: usize,
    pub edge_emb: usize,
    pub mha_heads: usize,
    pub mha_emb: usize,
    pub agent_emb: usize,
    pub rnn: usize,
    /// Multiplies all network inputs.
    pub input_scale: f64,
    pub log_std_init: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Init gain of the action-mean layer.
    pub action_gain: f64,
}

impl Hyper {
    pub fn from_config(arch: &ArchConfig, train: &TrainConfig) -> Self {
        Self {
            edge_heads: arch.edge_selector_num_head,
            edge_emb: arch.edge_selector_emb_size,
            mha_heads: arch.mha_num_head,
            mha_emb: arch.mha_emb_size,
            agent_emb: arch.agent_embedding_size,
            rnn: arch.human_node_rnn_size,
            input_scale: arch.input_scale,
            log_std_init: arch.log_std_init,
            log_std_min: arch.log_std_min,
            log_std_max: arch.log_std_max,
            action_gain: train.gain,
        }
    }

    /// Small sizes for tests and quick experiments.
    pub fn tiny() -> Self {
        Self {
            edge_heads: 2,
            edge_emb: 8,
            mha_heads: 2,
            mha_emb: 8,
            agent_emb: 6,
            rnn: 5,
            input_scale: 1.0,
            log_std_init: 0.0,
            log_std_min: -5.0,
            log_std_max: 1.0,
            action_gain: 0.01,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: String| Err(PolicyError::Shape(m));
        if [
            self.edge_heads,
            self.edge_emb,
            self.mha_heads,
            self.mha_emb,
            self.agent_emb,
            self.rnn,
        ]
        .contains(&0)
        {
            return bad("architecture sizes must be positive".into());
        }
        if self.edge_emb % self.edge_heads != 0 {
            return bad(format!(
                "edge_selector_emb_size {} not divisible by edge_selector_num_head {}",
                self.edge_emb, self.edge_heads
            ));
        }
        if self.mha_emb % self.mha_heads != 0 {
            return bad(format!(
                "mha_emb_size {} not divisible by mha_num_head {}",
                self.mha_emb, self.mha_heads
            ));
        }
        if !(self.log_std_min <= self.log_std_init && self.log_std_init <= self.log_std_max) {
            return bad("log_std_init outside [log_std_min, log_std_max]".into());
        }
        Ok(())
    }
}

/// Exponential annealing of the Gumbel-Softmax temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemperatureSchedule {
    pub start: f64,
    pub base: f64,
    pub min: f64,
    pub total_steps: u64,
}

impl TemperatureSchedule {
    pub fn from_config(train: &TrainConfig) -> Self {
        Self {
            start: train.temperature_at_beginning,
            base: train.base_temperature,
            min: train.min_temperature,
            total_steps: train.num_env_steps,
        }
    }
}

/// `max(min, start·(base/start)^(step/total))`: `start` at step 0, `base`
/// after `total_steps`, never below `min`.
pub fn temperature(step: u64, s: &TemperatureSchedule) -> f64 {
    let frac = step as f64 / s.total_steps.max(1) as f64;
    (s.start * (s.base / s.start).powf(frac)).max(s.min)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMode {
    /// Straight-through one-hot per head.
    Hard,
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Deterministic,
}

/// Freshly initialized network weights.
pub fn init_params(hyper: &Hyper, rng: &mut Rng) -> Result<ParamSet, PolicyError> {
    hyper.validate()?;
    let mut p = ParamSet::new();
    for name in ["es.q", "es.k", "es.v"] {
        init_linear(&mut p, name, NODE_DIM, hyper.edge_emb, 1.0, rng)?;
    }
    p.insert("es.gumbel.w", Tensor::full(&[1, hyper.edge_heads], 1.0))?;
    p.init_zeros("es.gumbel.b", &[1, hyper.edge_heads])?;
    for name in ["cc.q", "cc.k", "cc.v"] {
        init_linear(&mut p, name, hyper.edge_emb, hyper.mha_emb, 1.0, rng)?;
    }
    init_linear(&mut p, "ic", INTRINSIC_DIM, hyper.agent_emb, 1.0, rng)?;
    init_gru(&mut p, "gru", hyper.mha_emb + hyper.agent_emb, hyper.rnn, rng)?;
    init_linear(&mut p, "actor", hyper.rnn, ACTION_DIM, hyper.action_gain, rng)?;
    init_linear(&mut p, "critic", hyper.rnn, 1, 1.0, rng)?;
    p.insert("log_std", Tensor::full(&[1, ACTION_DIM], hyper.log_std_init))?;
    Ok(p)
}

/// Observations stacked for one batched forward.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    /// `[B·N, NODE_DIM]`.
    pub features: Tensor,
    /// `[B·N, N]` row-major; visibility plus a self-loop on empty rows.
    pub adjacency: Rc<Vec<bool>>,
    /// Row of each graph's observing robot in the stacked layout.
    pub agent_rows: Rc<Vec<usize>>,
    /// `[B, INTRINSIC_DIM]`.
    pub intrinsic: Tensor,
    pub n: usize,
}

impl GraphBatch {
    pub fn new(obs: &[&Observation]) -> Result<Self, PolicyError> {
        let first = obs
            .first()
            .ok_or_else(|| PolicyError::Shape("empty observation batch".into()))?;
        let n = first.graph.num_nodes();
        if n == 0 {
            return Err(PolicyError::Shape("graph without nodes".into()));
        }
        let b = obs.len();
        let mut features = Vec::with_capacity(b * n * NODE_DIM);
        let mut adjacency = Vec::with_capacity(b * n * n);
        let mut agent_rows = Vec::with_capacity(b);
        let mut intrinsic = Vec::with_capacity(b * INTRINSIC_DIM);
        for (bi, o) in obs.iter().enumerate() {
            let g = &o.graph;
            if g.num_nodes() != n {
                return Err(PolicyError::Shape(format!(
                    "batch mixes {n}-node and {}-node graphs",
                    g.num_nodes()
                )));
            }
            if !o.intrinsic.iter().all(|v| v.is_finite()) || !g.features.is_finite() {
                return Err(PolicyError::NonFinite("observation"));
            }
            features.extend_from_slice(g.features.data());
            for i in 0..n {
                let row = &g.adjacency[i * n..(i + 1) * n];
                let start = adjacency.len();
                adjacency.extend_from_slice(row);
                if !row.iter().any(|&m| m) {
                    adjacency[start + i] = true;
                }
            }
            agent_rows.push(bi * n + g.agent);
            intrinsic.extend_from_slice(&o.intrinsic);
        }
        Ok(Self {
            features: Tensor::new(vec![b * n, NODE_DIM], features)?,
            adjacency: Rc::new(adjacency),
            agent_rows: Rc::new(agent_rows),
            intrinsic: Tensor::new(vec![b, INTRINSIC_DIM], intrinsic)?,
            n,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.agent_rows.len()
    }
}

/// One Gumbel sample per head for an `n`-node graph, `[n, heads·n]`; head
/// `k` occupies columns `k·n..(k+1)·n`.
pub fn edge_noise(n: usize, heads: usize, rng: &mut Rng) -> Tensor {
    gumbel_noise(&[n, heads * n], rng)
}

/// Deterministic edge noise for a stored seed.
pub fn edge_noise_from_seed(n: usize, heads: usize, seed: u64) -> Tensor {
    edge_noise(n, heads, &mut Rng::seed_from_u64(seed))
}

/// Rearranges per-observation noise into one `[B·N, N]` tensor per head.
pub fn stack_noise(per_obs: &[&Tensor], heads: usize, n: usize) -> Result<Vec<Tensor>, PolicyError> {
    let mut out = vec![Tensor::zeros(&[per_obs.len() * n, n]); heads];
    for (b, t) in per_obs.iter().enumerate() {
        if t.shape() != [n, heads * n] {
            return Err(PolicyError::Shape(format!(
                "edge noise {:?}, expected [{n}, {}]",
                t.shape(),
                heads * n
            )));
        }
        for i in 0..n {
            let row = t.row_slice(i);
            for (k, head) in out.iter_mut().enumerate() {
                head.row_slice_mut(b * n + i)
                    .copy_from_slice(&row[k * n..(k + 1) * n]);
            }
        }
    }
    Ok(out)
}

/// Tape handles produced by one batched forward.
pub struct ForwardVars<'t> {
    /// `[B, 2]`.
    pub mean: Var<'t>,
    /// `[1, 2]`, clamped to the configured range.
    pub log_std: Var<'t>,
    /// `[B, 1]`.
    pub value: Var<'t>,
    /// `[B, rnn]`.
    pub hidden: Var<'t>,
    pub sparse: SparseGraph<'t>,
    pub coordinator_attention: Vec<Var<'t>>,
}

/// Full network on a tape.
#[allow(clippy::too_many_arguments)]
pub fn forward_on_tape<'t>(
    tape: &'t Tape,
    params: &ParamSet,
    hyper: &Hyper,
    batch: &GraphBatch,
    h_prev: Var<'t>,
    tau: f64,
    noise: &[Tensor],
    selection: SelectionMode,
) -> Result<ForwardVars<'t>, PolicyError> {
    if h_prev.shape() != [batch.batch_size(), hyper.rnn] {
        return Err(PolicyError::Shape(format!(
            "hidden state {:?}, expected [{}, {}]",
            h_prev.shape(),
            batch.batch_size(),
            hyper.rnn
        )));
    }
    let sparse = edge_selector(tape, params, hyper, batch, tau, noise, selection)?;
    let (crowd, coordinator_attention) = crowd_coordinator(tape, params, hyper, &sparse)?;
    let agent = crowd.gather_rows(batch.agent_rows.clone())?;
    let w = tape.constant(batch.intrinsic.map(|x| x * hyper.input_scale));
    let own = intrinsic_coordinator(tape, params, w)?;
    let v_const = Var::concat_cols(&[agent, own])?;
    let hidden = Gru::bind(tape, params, "gru")?.step(h_prev, v_const)?;
    if !hidden.value().is_finite() {
        return Err(PolicyError::NonFinite("recurrent core"));
    }
    let mean = Linear::bind(tape, params, "actor")?.forward(hidden)?;
    let value = Linear::bind(tape, params, "critic")?.forward(hidden)?;
    let log_std = tape
        .param(params, "log_std")?
        .clamp(hyper.log_std_min, hyper.log_std_max);
    if !mean.value().is_finite() || !value.value().is_finite() {
        return Err(PolicyError::NonFinite("output heads"));
    }
    Ok(ForwardVars {
        mean,
        log_std,
        value,
        hidden,
        sparse,
        coordinator_attention,
    })
}

/// Batched policy output as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    /// `[B, 2]` action means.
    pub mean: Tensor,
    pub log_std: [f64; ACTION_DIM],
    /// `[B, 2]` drawn (or, deterministically, mean) actions.
    pub action: Tensor,
    pub log_prob: Vec<f64>,
    pub value: Vec<f64>,
    /// `[B, rnn]` next hidden state.
    pub hidden: Tensor,
}

/// Forward with explicit edge noise (one `[N, heads·N]` tensor per
/// observation). Actions are drawn from `rng` in `Sample` mode.
#[allow(clippy::too_many_arguments)]
pub fn forward_with_noise(
    obs: &[&Observation],
    h_prev: &Tensor,
    params: &ParamSet,
    hyper: &Hyper,
    tau: f64,
    noise: &[&Tensor],
    rng: &mut Rng,
    mode: ActionMode,
) -> Result<PolicyOutput, PolicyError> {
    let batch = GraphBatch::new(obs)?;
    let stacked = stack_noise(noise, hyper.edge_heads, batch.n)?;
    let tape = Tape::new();
    let h = tape.constant(h_prev.clone());
    let f = forward_on_tape(
        &tape,
        params,
        hyper,
        &batch,
        h,
        tau,
        &stacked,
        SelectionMode::Hard,
    )?;
    let mean = f.mean.value().clone();
    let ls = f.log_std.value();
    let log_std = [ls.data()[0], ls.data()[1]];
    let action = match mode {
        ActionMode::Deterministic => mean.clone(),
        ActionMode::Sample => {
            let mut a = mean.clone();
            for (i, v) in a.data_mut().iter_mut().enumerate() {
                let eps: f64 = rng.sample(StandardNormal);
                *v += log_std[i % ACTION_DIM].exp() * eps;
            }
            a
        }
    };
    let log_prob = (0..action.rows())
        .map(|i| gaussian_log_prob_values(mean.row_slice(i), &log_std, action.row_slice(i)))
        .collect();
    let value = f.value.value().data().to_vec();
    let hidden = f.hidden.value().clone();
    Ok(PolicyOutput {
        mean,
        log_std,
        action,
        log_prob,
        value,
        hidden,
    })
}

/// Forward drawing the edge noise from `rng` (before any action noise).
pub fn forward(
    obs: &[&Observation],
    h_prev: &Tensor,
    params: &ParamSet,
    hyper: &Hyper,
    tau: f64,
    rng: &mut Rng,
    mode: ActionMode,
) -> Result<PolicyOutput, PolicyError> {
    let noise: Vec<Tensor> = obs
        .iter()
        .map(|o| edge_noise(o.graph.num_nodes(), hyper.edge_heads, rng))
        .collect();
    let refs: Vec<&Tensor> = noise.iter().collect();
    forward_with_noise(obs, h_prev, params, hyper, tau, &refs, rng, mode)
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal Gaussian log-density.
pub fn gaussian_log_prob_values(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

/// Diagonal Gaussian entropy.
pub fn gaussian_entropy_values(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| 0.5 + 0.5 * (2.0 * PI).ln() + ls).sum()
}

/// `[B, 1]` log-densities of fixed `actions` under `N(mean, exp(log_std)²)`.
pub fn gaussian_log_prob<'t>(mean: Var<'t>, log_std: Var<'t>, actions: &Tensor) -> Result<Var<'t>, NumError> {
    let a = mean.tape().constant(actions.clone());
    let z = a.sub(mean)?.mul(log_std.neg().exp())?;
    let per_dim = z.square().scale(-0.5).sub(log_std)?.add_scalar(-0.5 * LN_2PI);
    Ok(per_dim.row_sum())
}

/// `[1, 1]` entropy of the state-independent Gaussian.
pub fn gaussian_entropy<'t>(log_std: Var<'t>) -> Var<'t> {
    log_std.add_scalar(0.5 + 0.5 * LN_2PI).sum()
}
