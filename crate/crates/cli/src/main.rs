use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use multisoc_cli::svg::RenderOptions;
use multisoc_cli::{cmd_eval, cmd_replay, cmd_train, load_config, CliError, EvalRequest, PolicyChoice};

/// Multi-robot crowd navigation: training, evaluation and trajectory plots.
#[derive(Parser)]
#[command(name = "multisoc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PolicyArg {
    Learned,
    Random,
    Goal,
}

#[derive(Subcommand)]
enum Command {
    /// Train a shared policy with multi-agent PPO.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Resume from a checkpoint written by an earlier run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Extra `key=value` config overrides.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint (or a baseline) on fresh episodes.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        #[arg(long, default_value = "runs/eval")]
        out: PathBuf,
        /// Use the action mean instead of sampling.
        #[arg(long)]
        deterministic: bool,
        #[arg(long, value_enum, default_value = "learned")]
        policy: PolicyArg,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Render an episode CSV as SVG.
    Replay {
        /// Episode CSV written by `eval`.
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config whose sensor range sizes the robots' dashed circle.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Snapshot record index (default: last).
        #[arg(long)]
        frame: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            checkpoint,
            overrides,
        } => {
            let cfg = load_config(&config, seed, &overrides)?;
            let s = cmd_train(&cfg, &out, checkpoint.as_deref())?;
            println!(
                "trained {} steps; rolling success {:.3}, mean episode reward {:.3}",
                s.steps, s.success_rate, s.mean_episode_reward
            );
            if let Some(last) = s.checkpoints.last() {
                println!("last checkpoint: {}", last.display());
            }
            println!("curve: {}", s.curve.display());
        }
        Command::Eval {
            config,
            checkpoint,
            episodes,
            seed,
            out,
            deterministic,
            policy,
            overrides,
        } => {
            let cfg = load_config(&config, None, &overrides)?;
            let req = EvalRequest {
                config: &cfg,
                checkpoint: checkpoint.as_deref(),
                episodes,
                seed,
                deterministic,
                policy: match policy {
                    PolicyArg::Learned => PolicyChoice::Learned,
                    PolicyArg::Random => PolicyChoice::Random,
                    PolicyArg::Goal => PolicyChoice::GoalSeeker,
                },
            };
            let report = cmd_eval(&req, &out)?;
            print!("{}", report.table());
            println!("results written to {}", out.display());
        }
        Command::Replay {
            csv,
            out,
            config,
            frame,
        } => {
            let mut opts = RenderOptions {
                frame,
                ..RenderOptions::default()
            };
            if let Some(c) = config {
                opts.sensor_range = load_config(&c, None, &[])?.scenario.sensor_range;
            }
            let p = cmd_replay(&csv, &out, &opts)?;
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
