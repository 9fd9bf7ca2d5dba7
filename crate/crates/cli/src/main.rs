use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use sparseq::envs::normalized_return;
use sparseq::harness::{
    aggregate_dir, load_checkpoint, resume_checkpoint, train_to_dir, Agent, ExperimentConfig,
    RunMeta, Trainer,
};
use sparseq::rng::RngStream;
use sparseq::Error;

#[derive(Parser)]
#[command(
    name = "sparseq",
    version,
    about = "Sparse value-based reinforcement learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write its log, events and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Output directory (default: runs/<algorithm>-<env>-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written for the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Also write a checkpoint every this many steps.
        #[arg(long)]
        checkpoint_every: Option<u64>,
    },
    /// Mean raw return of a checkpoint's greedy / mean-action policy.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// IQM and bootstrap intervals across the run directories under --runs.
    Aggregate {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print per-member sparsity, losses and the champion of a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn train(
    config: &Path,
    seed: u64,
    out: Option<PathBuf>,
    resume: Option<PathBuf>,
    checkpoint_every: Option<u64>,
) -> anyhow::Result<()> {
    let config = ExperimentConfig::load(config, Some(seed))?;
    let out = out.unwrap_or_else(|| {
        PathBuf::from("runs").join(format!("{}-{}-seed{}", config.algorithm, config.env, seed))
    });
    let mut trainer = match resume {
        Some(path) => resume_checkpoint(&path, &config)?,
        None => Trainer::new(config)?,
    };
    train_to_dir(&mut trainer, &out, checkpoint_every)?;
    let last = trainer.log.records.last();
    println!(
        "trained {} on {} for {} steps; champion sparsity {:.4}; last episode return {}; output in {}",
        trainer.config.algorithm,
        trainer.config.env,
        trainer.step,
        trainer.champion_sparsity(),
        last.map_or(f64::NAN, |r| r.episode_return),
        out.display()
    );
    Ok(())
}

fn evaluate(checkpoint: &Path, episodes: usize, seed: u64) -> anyhow::Result<()> {
    if episodes == 0 {
        bail!(Error::Argument("--episodes must be at least 1".into()));
    }
    let mut trainer = load_checkpoint(checkpoint)?;
    trainer.streams.eval = RngStream::new(seed, "evaluate");
    let raw = trainer.evaluate(episodes)?;
    let meta = RunMeta::for_config(&trainer.config)?;
    let normalized = normalized_return(raw, &meta.baselines)?;
    println!("episodes {episodes}");
    println!("mean_return {raw}");
    println!("normalized_return {normalized}");
    Ok(())
}

fn aggregate(runs: &Path, out: &Path) -> anyhow::Result<()> {
    let summary = aggregate_dir(runs)?;
    std::fs::write(out, summary.to_csv()?).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} rows to {}", summary.rows.len(), out.display());
    Ok(())
}

fn fmt_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.6}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn inspect(checkpoint: &Path) -> anyhow::Result<()> {
    let trainer = load_checkpoint(checkpoint)?;
    let c = &trainer.config;
    println!("algorithm {}", c.algorithm);
    println!("env {}", c.env);
    println!("seed {}", c.seed);
    println!("step {} of {}", trainer.step, c.total_steps);
    println!("digest {}", c.digest());
    match &trainer.agent {
        Agent::Value(agent) => {
            let p = &agent.population;
            println!("champion {}", p.champion);
            println!("sparsity {}", fmt_list(&p.sparsities()));
            println!("loss {}", fmt_list(&p.losses()));
        }
        Agent::ActorCritic(agent) => {
            for (i, critic) in agent.twin.critics.iter().enumerate() {
                println!("critic{} champion {}", i + 1, critic.champion);
                println!(
                    "critic{} sparsity {}",
                    i + 1,
                    fmt_list(&critic.sparsities())
                );
                println!("critic{} loss {}", i + 1, fmt_list(&critic.losses()));
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::NonFiniteLoss { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            seed,
            out,
            resume,
            checkpoint_every,
        } => train(&config, seed, out, resume, checkpoint_every),
        Command::Evaluate {
            checkpoint,
            episodes,
            seed,
        } => evaluate(&checkpoint, episodes, seed),
        Command::Aggregate { runs, out } => aggregate(&runs, &out),
        Command::Inspect { checkpoint } => inspect(&checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
