//! Multi-agent PPO with one parameter set shared by all robots: parallel
//! rollouts, GAE with value normalization, recurrent clipped-surrogate
//! updates, checkpointing and evaluation.

mod buffer;
mod eval;
mod ppo;
mod rollout;
mod train;

pub use buffer::{gae, gae_sequence, standardize, RolloutBatch, ValueNormalizer};
pub use eval::{
    controller_rng, evaluate, run_episode, Controller, GoalSeeker, LearnedController, RandomController,
};
pub use ppo::{
    chunk_starts, minibatch_loss, ppo_update, prepare_targets, MinibatchLoss, PpoConfig, PpoStats, Targets,
};
pub use rollout::{collect_rollouts, EnvWorker, EpisodeSummary, VecEnv};
pub use train::{
    checkpoint_path, load_params, train, TrainSummary, TrainerState, CHECKPOINT_DIR, CURVE_FILE,
};

use crate::numcore::NumError;
use crate::policy::PolicyError;
use crate::sim::SimError;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "MULTISOC_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum MappoError {
    #[error("environment {env}: {source}")]
    Env { env: usize, source: SimError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Thread pool honoring `MULTISOC_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool, MappoError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| MappoError::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
        b = b.num_threads(n.max(1));
    }
    b.build()
        .map_err(|e| MappoError::Config(format!("thread pool: {e}")))
}
