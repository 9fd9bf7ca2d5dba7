//! Experiment orchestration: configuration, the training loop, logging,
//! checkpoints and cross-seed aggregation.
//!
//! A run directory holds `run.json` (identity and normalization
//! baselines), `log.csv`, `events.jsonl` and checkpoints (`final.ckpt`,
//! periodic `step-<t>.ckpt`, or `abort.ckpt` after a numeric failure).

mod aggregate;
mod checkpoint;
mod config;
mod log;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use aggregate::{
    aggregate_runs, bootstrap_iqm_interval, iqm, trimmed_mean, Estimate, Summary, SummaryRow,
    BOOTSTRAP_RESAMPLES,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, resume_checkpoint, save_checkpoint,
};
pub use config::{
    Algorithm, EpsilonSchedule, EvalSettings, ExperimentConfig, LogSettings, SacSettings,
};
pub use log::{EventRecord, LogLayout, LogRecord, RunLog};
pub use train::{
    build_agent, evaluate_policy, log_layout, matches_value_iteration, run_training, Agent,
    Streams, Trainer,
};

use crate::envs::{default_baselines, Baselines, EnvId};
use crate::error::{Error, Result};

/// Seed of the Monte-Carlo baseline estimate shared by every run.
pub const BASELINE_SEED: u64 = 0;

/// Identity of a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub algorithm: Algorithm,
    pub env: EnvId,
    pub seed: u64,
    pub digest: String,
    pub baselines: Baselines,
}

impl RunMeta {
    pub fn for_config(config: &ExperimentConfig) -> Result<Self> {
        let baselines = match config.baselines {
            Some(b) => b,
            None => default_baselines(config.env, BASELINE_SEED)?,
        };
        Ok(Self {
            algorithm: config.algorithm,
            env: config.env,
            seed: config.seed,
            digest: config.digest(),
            baselines,
        })
    }
}

fn write_outputs(trainer: &Trainer, out: &Path) -> Result<()> {
    trainer
        .log
        .write(&out.join("log.csv"), &out.join("events.jsonl"))
}

/// Trains to completion inside `out`, writing the log, the event stream and
/// a final checkpoint (plus one every `checkpoint_every` steps). On a
/// non-finite loss the current state is dumped to `abort.ckpt` before the
/// error is returned.
pub fn train_to_dir(
    trainer: &mut Trainer,
    out: &Path,
    checkpoint_every: Option<u64>,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let meta = RunMeta::for_config(&trainer.config)?;
    let meta_text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(out.join("run.json"), meta_text + "\n")?;
    let total = trainer.config.total_steps;
    while !trainer.is_finished() {
        let until = match checkpoint_every {
            Some(every) if every > 0 => ((trainer.step / every) + 1) * every,
            _ => total,
        };
        match trainer.run_to(until) {
            Ok(()) => {}
            Err(e @ Error::NonFiniteLoss { .. }) => {
                save_checkpoint(trainer, &out.join("abort.ckpt"))?;
                write_outputs(trainer, out)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        if !trainer.is_finished() {
            save_checkpoint(trainer, &out.join(format!("step-{}.ckpt", trainer.step)))?;
        }
    }
    save_checkpoint(trainer, &out.join("final.ckpt"))?;
    write_outputs(trainer, out)
}

/// Reads the metadata and CSV log of one run directory.
pub fn read_run_dir(dir: &Path) -> Result<(RunMeta, RunLog)> {
    let meta_text = std::fs::read_to_string(dir.join("run.json"))?;
    let meta: RunMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Validation(format!("{}: {e}", dir.join("run.json").display())))?;
    let log = RunLog::from_csv(&std::fs::read_to_string(dir.join("log.csv"))?)?;
    Ok((meta, log))
}

/// Run directories directly below `root` (those containing `log.csv`),
/// sorted by name.
pub fn find_run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        if path.join("log.csv").is_file() {
            dirs.push(path);
        }
    }
    if root.join("log.csv").is_file() {
        dirs.push(root.to_path_buf());
    }
    dirs.sort();
    Ok(dirs)
}

/// Aggregates every run found under `root`. Runs must agree on algorithm,
/// environment, baselines and log schema.
pub fn aggregate_dir(root: &Path) -> Result<Summary> {
    let runs = find_run_dirs(root)?
        .iter()
        .map(|d| read_run_dir(d))
        .collect::<Result<Vec<_>>>()?;
    let (first, _) = runs
        .first()
        .ok_or_else(|| Error::Empty(format!("no runs under {}", root.display())))?;
    let mut differing = Vec::new();
    if runs.iter().any(|(m, _)| m.algorithm != first.algorithm) {
        differing.push("algorithm".to_string());
    }
    if runs.iter().any(|(m, _)| m.env != first.env) {
        differing.push("env".to_string());
    }
    if runs.iter().any(|(m, _)| m.baselines != first.baselines) {
        differing.push("baselines".to_string());
    }
    if !differing.is_empty() {
        return Err(Error::Schema(differing));
    }
    let baselines = first.baselines;
    let logs: Vec<RunLog> = runs.into_iter().map(|(_, l)| l).collect();
    aggregate_runs(&logs, &baselines)
}
