//! Command implementations behind the `multisoc` binary.

pub mod svg;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use multisoc::config::{Config, ConfigError};
use multisoc::mappo::{
    controller_rng, evaluate, load_params, thread_pool, train, GoalSeeker, LearnedController, MappoError,
    RandomController, TrainSummary,
};
use multisoc::policy::{ActionMode, Hyper};
use multisoc::sim::{read_episode_csv, write_episode_csv, EpisodeLog, MetricsReport, Status};

/// Name of the resolved configuration written beside every output.
pub const RESOLVED_CONFIG: &str = "config.resolved.cfg";
/// Number of evaluation episodes whose full trajectories are kept.
pub const SAVED_TRAJECTORIES: usize = 10;

/// Failure classes, mapped to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<MappoError> for CliError {
    fn from(e: MappoError) -> Self {
        match e {
            MappoError::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.into()),
        }
    }
}

/// Reads the config, applies `key=value` overrides and the seed.
pub fn load_config(path: &Path, seed: Option<u64>, overrides: &[String]) -> Result<Config, CliError> {
    let mut cfg = Config::from_file(path)?;
    for (i, kv) in overrides.iter().enumerate() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {kv:?} is not key=value")))?;
        cfg.set(k.trim(), v.trim(), i + 1).map_err(|e| match e {
            ConfigError::UnknownKey { key, .. } => CliError::Config(format!("unknown key `{key}` in --set")),
            other => other.into(),
        })?;
    }
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_resolved(cfg: &Config, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let p = out.join(RESOLVED_CONFIG);
    fs::write(&p, cfg.to_kv_string()).with_context(|| format!("writing {}", p.display()))?;
    Ok(())
}

pub fn cmd_train(cfg: &Config, out: &Path, resume: Option<&Path>) -> Result<TrainSummary, CliError> {
    write_resolved(cfg, out)?;
    let pool = thread_pool()?;
    let summary = pool.install(|| train(cfg, out, resume))?;
    Ok(summary)
}

/// Which controller drives the robots during evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyChoice {
    Learned,
    Random,
    GoalSeeker,
}

#[derive(Clone, Debug)]
pub struct EvalRequest<'a> {
    pub config: &'a Config,
    pub checkpoint: Option<&'a Path>,
    pub episodes: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub policy: PolicyChoice,
}

pub fn run_eval(req: &EvalRequest<'_>) -> Result<(MetricsReport, Vec<EpisodeLog>), CliError> {
    if req.episodes == 0 {
        return Err(CliError::Config("--episodes must be at least 1".into()));
    }
    let cfg = req.config;
    let pool = thread_pool()?;
    let seed = req.seed;
    let result = match req.policy {
        PolicyChoice::GoalSeeker => {
            pool.install(|| evaluate(&cfg.scenario, req.episodes, seed, |_| GoalSeeker))
        }
        PolicyChoice::Random => pool.install(|| {
            evaluate(&cfg.scenario, req.episodes, seed, |i| RandomController {
                rng: controller_rng(seed, i),
            })
        }),
        PolicyChoice::Learned => {
            let ckpt = req
                .checkpoint
                .ok_or_else(|| CliError::Config("--checkpoint is required for the learned policy".into()))?;
            let hyper = Hyper::from_config(&cfg.arch, &cfg.train);
            let params = load_params(ckpt, &hyper)?;
            let mode = if req.deterministic {
                ActionMode::Deterministic
            } else {
                ActionMode::Sample
            };
            let tau = cfg.train.min_temperature;
            pool.install(|| {
                evaluate(&cfg.scenario, req.episodes, seed, |i| {
                    LearnedController::new(&params, hyper.clone(), mode, tau, controller_rng(seed, i))
                })
            })
        }
    };
    Ok(result?)
}

/// Per-episode, per-robot outcome rows.
pub fn write_episode_table(logs: &[EpisodeLog], path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "episode",
        "robot",
        "status",
        "steps",
        "travel_time",
        "travel_length",
        "reward",
    ])?;
    for (ep, log) in logs.iter().enumerate() {
        for id in log.robot_ids() {
            // Step at which the robot stopped counting.
            let finish = log
                .records
                .iter()
                .position(|r| r.entities[id].status != Status::Active)
                .unwrap_or(log.records.len() - 1);
            let length: f64 = log.records[..=finish]
                .windows(2)
                .map(|p| p[0].entities[id].position.distance(p[1].entities[id].position))
                .sum();
            let status = log
                .records
                .last()
                .map(|r| r.entities[id].status)
                .unwrap_or(Status::Active);
            w.write_record([
                ep.to_string(),
                id.to_string(),
                match status {
                    Status::Active => "timeout".to_string(),
                    s => s.as_str().to_string(),
                },
                finish.to_string(),
                format!("{}", finish as f64 * log.dt),
                format!("{length}"),
                format!("{}", log.cumulative_reward(id)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Evaluates and writes `metrics.json`, `episodes.csv`, the first few
/// trajectories and the resolved config into `out`.
pub fn cmd_eval(req: &EvalRequest<'_>, out: &Path) -> Result<MetricsReport, CliError> {
    let (report, logs) = run_eval(req)?;
    write_resolved(req.config, out)?;
    fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&report).context("metrics")?,
    )
    .context("writing metrics.json")?;
    write_episode_table(&logs, &out.join("episodes.csv")).context("writing episodes.csv")?;
    let traj = out.join("trajectories");
    fs::create_dir_all(&traj).context("creating trajectories dir")?;
    for (i, log) in logs.iter().take(SAVED_TRAJECTORIES).enumerate() {
        let p = traj.join(format!("episode_{i:04}.csv"));
        let f = fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        write_episode_csv(log, BufWriter::new(f)).map_err(anyhow::Error::from)?;
    }
    Ok(report)
}

pub fn cmd_replay(csv_path: &Path, out: &Path, opts: &svg::RenderOptions) -> Result<PathBuf, CliError> {
    let f = fs::File::open(csv_path).with_context(|| format!("opening {}", csv_path.display()))?;
    let log = read_episode_csv(f).with_context(|| format!("reading {}", csv_path.display()))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(out, svg::render(&log, opts)).with_context(|| format!("writing {}", out.display()))?;
    Ok(out.to_path_buf())
}
