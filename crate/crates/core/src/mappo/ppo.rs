use rand::seq::SliceRandom;

use super::{gae, standardize, MappoError, RolloutBatch, ValueNormalizer};
use crate::config::TrainConfig;
use crate::numcore::{Adam, ParamSet, Tape, Tensor, Var};
use crate::percept::Observation;
use crate::policy::{
    edge_noise_from_seed, forward_on_tape, gaussian_entropy, gaussian_log_prob, stack_noise, GraphBatch,
    Hyper, SelectionMode,
};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub epochs: usize,
    pub minibatches: usize,
    pub chunk_len: usize,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl PpoConfig {
    pub fn from_config(t: &TrainConfig) -> Self {
        Self {
            epochs: t.ppo_epoch,
            minibatches: t.numminibatch,
            chunk_len: t.data_chunk_length,
            clip: t.clip_param,
            value_coef: t.value_loss_coef,
            entropy_coef: t.entropy_coef,
            max_grad_norm: t.max_grad_norm,
            lr: t.lr,
            critic_lr: t.critic_lr,
            gamma: t.gamma,
            lambda: t.gae_lambda,
        }
    }
}

/// Averages over all minibatch updates of one call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean of `log π_old − log π_new` over active samples.
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Pre-clipping gradient norm.
    pub grad_norm: f64,
    /// Mean clipped surrogate seen during each epoch, before that
    /// minibatch's update.
    pub surrogate_per_epoch: Vec<f64>,
    pub updates: usize,
}

/// Per-sample training targets aligned with the batch layout.
pub struct Targets {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// GAE, normalizer update and advantage standardization.
pub fn prepare_targets(batch: &RolloutBatch, norm: &mut ValueNormalizer, gamma: f64, lambda: f64) -> Targets {
    let (mut advantages, returns) = gae(batch, gamma, lambda);
    let active_returns: Vec<f64> = returns
        .iter()
        .zip(&batch.active)
        .filter(|(_, &a)| a)
        .map(|(r, _)| *r)
        .collect();
    norm.update(&active_returns);
    standardize(&mut advantages, &batch.active);
    Targets { advantages, returns }
}

/// Loss terms of one minibatch, as tape handles plus diagnostics.
pub struct MinibatchLoss<'t> {
    pub total: Var<'t>,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub surrogate: f64,
}

/// Replays the given chunks through the recurrent policy and builds the
/// PPO objective. `chunks` holds the batch index of each chunk's first step.
#[allow(clippy::too_many_arguments)]
pub fn minibatch_loss<'t>(
    tape: &'t Tape,
    params: &ParamSet,
    hyper: &Hyper,
    batch: &RolloutBatch,
    targets: &Targets,
    norm: &ValueNormalizer,
    chunks: &[usize],
    chunk_len: usize,
    cfg: &PpoConfig,
) -> Result<Option<MinibatchLoss<'t>>, MappoError> {
    let b = chunks.len();
    let order: Vec<usize> = (0..chunk_len)
        .flat_map(|t| chunks.iter().map(move |&c| c + t))
        .collect();
    let n_active = order.iter().filter(|&&i| batch.active[i]).count();
    if n_active == 0 {
        return Ok(None);
    }

    let h0: Vec<f64> = chunks
        .iter()
        .flat_map(|&c| batch.hidden[c].iter().copied())
        .collect();
    let mut h = tape.constant(Tensor::new(vec![b, hyper.rnn], h0)?);
    let mut logps = Vec::with_capacity(chunk_len);
    let mut values = Vec::with_capacity(chunk_len);
    let mut log_std = None;
    for t in 0..chunk_len {
        let idx: Vec<usize> = chunks.iter().map(|&c| c + t).collect();
        if t > 0 && idx.iter().any(|&i| batch.episode_starts[i]) {
            let keep: Vec<f64> = idx
                .iter()
                .map(|&i| if batch.episode_starts[i] { 0.0 } else { 1.0 })
                .collect();
            h = h.mul(tape.constant(Tensor::new(vec![b, 1], keep)?))?;
        }
        let obs: Vec<&Observation> = idx.iter().map(|&i| &batch.obs[i]).collect();
        let gb = GraphBatch::new(&obs)?;
        let noise: Vec<Tensor> = idx
            .iter()
            .map(|&i| edge_noise_from_seed(gb.n, hyper.edge_heads, batch.noise_seeds[i]))
            .collect();
        let noise = stack_noise(&noise.iter().collect::<Vec<_>>(), hyper.edge_heads, gb.n)?;
        let f = forward_on_tape(
            tape,
            params,
            hyper,
            &gb,
            h,
            batch.tau,
            &noise,
            SelectionMode::Hard,
        )?;
        let acts: Vec<f64> = idx.iter().flat_map(|&i| batch.actions[i]).collect();
        logps.push(gaussian_log_prob(
            f.mean,
            f.log_std,
            &Tensor::new(vec![b, 2], acts)?,
        )?);
        values.push(f.value);
        log_std = Some(f.log_std);
        h = f.hidden;
    }
    let logp = Var::concat_rows(&logps)?;
    let value = Var::concat_rows(&values)?;
    let log_std = log_std.expect("chunk_len > 0");

    let col =
        |f: &dyn Fn(usize) -> f64| Tensor::new(vec![order.len(), 1], order.iter().map(|&i| f(i)).collect());
    let w = col(&|i| {
        if batch.active[i] {
            1.0 / n_active as f64
        } else {
            0.0
        }
    })?;
    let old = col(&|i| batch.log_probs[i])?;
    let adv = col(&|i| targets.advantages[i])?;
    let ret = col(&|i| norm.normalize(targets.returns[i]))?;

    let wv = tape.constant(w.clone());
    let advv = tape.constant(adv.clone());
    let ratio = logp.sub(tape.constant(old.clone()))?.exp();
    let surr1 = ratio.mul(advv)?;
    let surr2 = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip).mul(advv)?;
    let surrogate = surr1.minimum(surr2)?.mul(wv)?.sum();
    let policy = surrogate.neg();
    let vloss = value.sub(tape.constant(ret))?.square().mul(wv)?.sum();
    let entropy = gaussian_entropy(log_std);
    let total = policy
        .add(vloss.scale(cfg.value_coef))?
        .sub(entropy.scale(cfg.entropy_coef))?;

    let (kl, clipped) = {
        let lp = logp.value();
        let r = ratio.value();
        let mut kl = 0.0;
        let mut clipped = 0.0;
        for (k, &i) in order.iter().enumerate() {
            if batch.active[i] {
                kl += batch.log_probs[i] - lp.data()[k];
                if (r.data()[k] - 1.0).abs() > cfg.clip {
                    clipped += 1.0;
                }
            }
        }
        (kl / n_active as f64, clipped / n_active as f64)
    };
    let out = MinibatchLoss {
        total,
        policy: policy.value().item(),
        value: vloss.value().item(),
        entropy: entropy.value().item(),
        approx_kl: kl,
        clip_fraction: clipped,
        surrogate: surrogate.value().item(),
    };
    if !out.total.value().is_finite() {
        return Err(MappoError::NonFiniteLoss(format!(
            "policy {} value {} entropy {}",
            out.policy, out.value, out.entropy
        )));
    }
    Ok(Some(out))
}

/// First-step indices of all chunks.
pub fn chunk_starts(batch: &RolloutBatch, chunk_len: usize) -> Result<Vec<usize>, MappoError> {
    if chunk_len == 0 || batch.len % chunk_len != 0 {
        return Err(MappoError::Config(format!(
            "data_chunk_length {chunk_len} must divide the rollout length {}",
            batch.len
        )));
    }
    Ok((0..batch.num_sequences())
        .flat_map(|s| (0..batch.len / chunk_len).map(move |c| s * batch.len + c * chunk_len))
        .collect())
}

/// Clipped-surrogate PPO over `cfg.epochs` passes of shuffled recurrent
/// chunks. Critic parameters use `critic_lr`, everything else `lr`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    params: &mut ParamSet,
    adam: &mut Adam,
    hyper: &Hyper,
    batch: &RolloutBatch,
    norm: &mut ValueNormalizer,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<PpoStats, MappoError> {
    let targets = prepare_targets(batch, norm, cfg.gamma, cfg.lambda);
    let mut chunks = chunk_starts(batch, cfg.chunk_len)?;
    let mb = cfg.minibatches.clamp(1, chunks.len().max(1));
    let mut stats = PpoStats::default();
    for _ in 0..cfg.epochs {
        chunks.shuffle(rng);
        let per = chunks.len().div_ceil(mb);
        let mut epoch_surr = 0.0;
        let mut epoch_n = 0;
        for group in chunks.chunks(per.max(1)) {
            let tape = Tape::new();
            let Some(loss) = minibatch_loss(
                &tape,
                params,
                hyper,
                batch,
                &targets,
                norm,
                group,
                cfg.chunk_len,
                cfg,
            )?
            else {
                continue;
            };
            tape.backward(loss.total)?.accumulate_into(params)?;
            let gn = params.clip_grad_norm(cfg.max_grad_norm);
            if !gn.is_finite() {
                return Err(MappoError::NonFiniteLoss(format!("gradient norm {gn}")));
            }
            adam.step_with(params, |name| {
                if name.starts_with("critic.") {
                    cfg.critic_lr
                } else {
                    cfg.lr
                }
            })?;
            stats.policy_loss += loss.policy;
            stats.value_loss += loss.value;
            stats.entropy += loss.entropy;
            stats.approx_kl += loss.approx_kl;
            stats.clip_fraction += loss.clip_fraction;
            stats.grad_norm += gn;
            stats.updates += 1;
            epoch_surr += loss.surrogate;
            epoch_n += 1;
        }
        stats.surrogate_per_epoch.push(if epoch_n > 0 {
            epoch_surr / epoch_n as f64
        } else {
            0.0
        });
    }
    if stats.updates > 0 {
        let n = stats.updates as f64;
        stats.policy_loss /= n;
        stats.value_loss /= n;
        stats.entropy /= n;
        stats.approx_kl /= n;
        stats.clip_fraction /= n;
        stats.grad_norm /= n;
    }
    Ok(stats)
}
