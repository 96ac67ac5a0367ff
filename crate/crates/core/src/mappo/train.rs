use std::collections::VecDeque;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{collect_rollouts, ppo_update, EpisodeSummary, MappoError, PpoConfig, ValueNormalizer, VecEnv};
use crate::config::Config;
use crate::numcore::{load_checkpoint, save_checkpoint, Adam, AdamHyper, ParamSet, Tensor};
use crate::policy::{init_params, temperature, Hyper, TemperatureSchedule};
use crate::rng::{stream, stream_seed};
use crate::sim::Status;

/// Trainer state stored next to each parameter checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainerState {
    pub step: u64,
    pub iteration: u64,
    pub adam_step: u64,
    pub normalizer: ValueNormalizer,
    pub tau: f64,
    pub recent_returns: Vec<f64>,
    pub recent_success: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub checkpoints: Vec<PathBuf>,
    pub curve: PathBuf,
    /// Rolling success rate at the end of training.
    pub success_rate: f64,
    pub mean_episode_reward: f64,
}

pub const CURVE_FILE: &str = "curve.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("step_{step:010}.ckpt"))
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

/// Loads network weights and checks every tensor against the shapes the
/// architecture expects.
pub fn load_params(path: &Path, hyper: &Hyper) -> Result<ParamSet, MappoError> {
    let entries = load_checkpoint(path)?;
    let mut expected = init_params(hyper, &mut stream(0, "shape-probe"))?;
    for (name, t) in &entries {
        let slot = expected.get_mut(name).ok_or_else(|| {
            MappoError::Checkpoint(format!("{}: unexpected parameter {name}", path.display()))
        })?;
        if slot.shape() != t.shape() {
            return Err(MappoError::Checkpoint(format!(
                "{}: parameter {name} has shape {:?}, architecture expects {:?}",
                path.display(),
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t.clone();
    }
    let names: Vec<String> = expected.names().to_vec();
    if let Some(missing) = names.iter().find(|n| !entries.iter().any(|(e, _)| e == *n)) {
        return Err(MappoError::Checkpoint(format!(
            "{}: missing parameter {missing}",
            path.display()
        )));
    }
    Ok(expected)
}

fn save_all(path: &Path, params: &ParamSet, adam: &Adam, state: &TrainerState) -> Result<(), MappoError> {
    let entries: Vec<(String, Tensor)> = params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    save_checkpoint(path, &entries)?;
    save_checkpoint(&sidecar(path, "opt"), &adam.export())?;
    fs::write(sidecar(path, "json"), serde_json::to_string_pretty(state)?)?;
    Ok(())
}

struct Window {
    returns: VecDeque<f64>,
    success: VecDeque<bool>,
    cap: usize,
}

impl Window {
    fn push(&mut self, ep: &EpisodeSummary) {
        for (r, s) in ep.returns.iter().zip(&ep.statuses) {
            self.returns.push_back(*r);
            self.success.push_back(*s == Status::Reached);
            if self.returns.len() > self.cap {
                self.returns.pop_front();
                self.success.pop_front();
            }
        }
    }

    fn mean_return(&self) -> f64 {
        if self.returns.is_empty() {
            0.0
        } else {
            self.returns.iter().sum::<f64>() / self.returns.len() as f64
        }
    }

    fn success_rate(&self) -> f64 {
        if self.success.is_empty() {
            0.0
        } else {
            self.success.iter().filter(|&&s| s).count() as f64 / self.success.len() as f64
        }
    }
}

/// Collect → GAE → PPO until `num_env_steps` environment steps (summed
/// over environments) have been taken. Writes `checkpoints/step_*.ckpt`
/// (plus `.opt` optimizer moments and `.json` trainer state) and
/// `curve.csv` with the rolling mean robot return and success rate over
/// the last `success_window` robot episodes.
pub fn train(config: &Config, out_dir: &Path, resume: Option<&Path>) -> Result<TrainSummary, MappoError> {
    let tc = &config.train;
    let seed = config.scenario.seed;
    let hyper = Hyper::from_config(&config.arch, tc);
    let ppo = PpoConfig::from_config(tc);
    let schedule = TemperatureSchedule::from_config(tc);
    fs::create_dir_all(out_dir.join(CHECKPOINT_DIR))?;

    let mut adam = Adam::new(AdamHyper {
        eps: tc.adam_eps,
        ..AdamHyper::default()
    });
    let (mut params, mut state) = match resume {
        Some(path) => {
            let params = load_params(path, &hyper)?;
            let state: TrainerState = serde_json::from_str(&fs::read_to_string(sidecar(path, "json"))?)?;
            adam.import(state.adam_step, &load_checkpoint(&sidecar(path, "opt"))?);
            (params, state)
        }
        None => (
            init_params(&hyper, &mut stream(seed, "init"))?,
            TrainerState {
                step: 0,
                iteration: 0,
                adam_step: 0,
                normalizer: ValueNormalizer::default(),
                tau: temperature(0, &schedule),
                recent_returns: Vec::new(),
                recent_success: Vec::new(),
            },
        ),
    };
    let mut window = Window {
        returns: state.recent_returns.iter().copied().collect(),
        success: state.recent_success.iter().copied().collect(),
        cap: tc.success_window.max(1),
    };
    // Streams are re-derived from the step count so a resumed run does not
    // replay the episodes of the original one.
    let run_seed = if state.step == 0 {
        seed
    } else {
        stream_seed(seed, &format!("resume-{}", state.step))
    };
    let mut envs = VecEnv::new(
        &config.scenario,
        tc.nrolloutthread,
        hyper.rnn,
        stream_seed(run_seed, "envs"),
    )?;
    let mut ppo_rng = stream(run_seed, "ppo");

    let curve = out_dir.join(CURVE_FILE);
    let mut curve_file = if resume.is_some() && curve.exists() {
        OpenOptions::new().append(true).open(&curve)?
    } else {
        let mut f = fs::File::create(&curve)?;
        writeln!(f, "step,mean_episode_reward,success_rate,episodes")?;
        f
    };

    let mut checkpoints = Vec::new();
    let snapshot = |state: &mut TrainerState, window: &Window, adam: &Adam| {
        state.adam_step = adam.step_count();
        state.recent_returns = window.returns.iter().copied().collect();
        state.recent_success = window.success.iter().copied().collect();
    };
    if resume.is_none() {
        snapshot(&mut state, &window, &adam);
        let p = checkpoint_path(out_dir, 0);
        save_all(&p, &params, &adam, &state)?;
        checkpoints.push(p);
    }

    let per_iter = (tc.nrolloutthread * tc.episode_length) as u64;
    let mut episodes_seen = 0u64;
    while per_iter > 0 && state.step + per_iter <= tc.num_env_steps {
        let tau = temperature(state.step, &schedule);
        let (batch, episodes) = collect_rollouts(
            &mut envs,
            &params,
            &hyper,
            tau,
            tc.episode_length,
            &state.normalizer,
        )?;
        for ep in &episodes {
            window.push(ep);
        }
        episodes_seen += episodes.len() as u64;
        let stats = match ppo_update(
            &mut params,
            &mut adam,
            &hyper,
            &batch,
            &mut state.normalizer,
            &ppo,
            &mut ppo_rng,
        ) {
            Ok(s) => s,
            Err(e @ (MappoError::NonFiniteLoss(_) | MappoError::Num(_))) => {
                snapshot(&mut state, &window, &adam);
                let diag = out_dir.join("diagnostic.ckpt");
                save_all(&diag, &params, &adam, &state)?;
                log::error!(
                    "aborting at step {}: {e}; state saved to {}",
                    state.step,
                    diag.display()
                );
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let prev = state.step;
        state.step += per_iter;
        state.iteration += 1;
        state.tau = tau;
        writeln!(
            curve_file,
            "{},{},{},{}",
            state.step,
            window.mean_return(),
            window.success_rate(),
            episodes_seen
        )?;
        log::info!(
            "step {} tau {:.3} return {:.3} success {:.3} pl {:.4} vl {:.4} kl {:.5} clip {:.3}",
            state.step,
            tau,
            window.mean_return(),
            window.success_rate(),
            stats.policy_loss,
            stats.value_loss,
            stats.approx_kl,
            stats.clip_fraction
        );
        let interval = tc.checkpoint_interval.max(1);
        if state.step / interval > prev / interval {
            snapshot(&mut state, &window, &adam);
            let p = checkpoint_path(out_dir, state.step);
            save_all(&p, &params, &adam, &state)?;
            checkpoints.push(p);
        }
    }
    curve_file.flush()?;
    if checkpoints.last() != Some(&checkpoint_path(out_dir, state.step)) {
        snapshot(&mut state, &window, &adam);
        let p = checkpoint_path(out_dir, state.step);
        save_all(&p, &params, &adam, &state)?;
        checkpoints.push(p);
    }
    Ok(TrainSummary {
        steps: state.step,
        checkpoints,
        curve,
        success_rate: window.success_rate(),
        mean_episode_reward: window.mean_return(),
    })
}
