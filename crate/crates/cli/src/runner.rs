//! Drives an experiment's tasks in order, checkpointing between units and
//! writing the CSV and summary when every task has finished.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::checkpoint::RunState;
use crate::config::{config_hash, ConfigError, RunConfig};
use crate::error::CliError;
use crate::experiments::{self, Budget, TaskOutcome};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the config's thread count when set.
    pub threads: Option<usize>,
    /// Defaults to `<output_dir>/run.ckp`.
    pub checkpoint: Option<PathBuf>,
    /// Save a checkpoint after this many units of work.
    pub checkpoint_every: Option<u64>,
    /// Save a checkpoint and stop after this many units in this invocation.
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed(RunReport),
    Interrupted { checkpoint: PathBuf, units: u64 },
}

pub const SUMMARY_FILE: &str = "summary.json";

pub fn run_path(path: &Path, options: &RunOptions) -> Result<RunStatus, CliError> {
    let (config, text) = RunConfig::load(path)?;
    drive(config, RunState::new(text), options)
}

/// Runs config text that has not been written to disk.
pub fn run_text(text: &str, options: &RunOptions) -> Result<RunStatus, CliError> {
    let config = RunConfig::parse(text)?;
    drive(config, RunState::new(text), options)
}

/// Continues from `checkpoint`. When `config` is given its text must hash to
/// the value the checkpoint was written with.
pub fn resume(checkpoint: &Path, config: Option<&Path>, options: &RunOptions) -> Result<RunStatus, CliError> {
    let state = RunState::load(checkpoint)?;
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let (expected, got) = (config_hash(&state.config_text), config_hash(&text));
        if expected != got {
            return Err(ConfigError::new(
                "",
                format!("config hash {got:016x} does not match checkpoint hash {expected:016x}"),
            )
            .into());
        }
    }
    let config = RunConfig::parse(&state.config_text)?;
    let options = RunOptions { checkpoint: Some(options.checkpoint.clone().unwrap_or_else(|| checkpoint.to_path_buf())), ..options.clone() };
    drive(config, state, &options)
}

fn drive(config: RunConfig, mut state: RunState, options: &RunOptions) -> Result<RunStatus, CliError> {
    let experiment = experiments::build(&config);
    let checkpoint = options.checkpoint.clone().unwrap_or_else(|| config.output_dir.join("run.ckp"));
    let threads = options.threads.unwrap_or(config.threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Experiment(format!("thread pool: {e}")))?;

    let tasks = experiment.task_count();
    let mut this_run = 0u64;
    let mut since_save = 0u64;
    while state.task < tasks {
        if options.stop_after.is_some_and(|s| this_run >= s) {
            state.save(&checkpoint)?;
            return Ok(RunStatus::Interrupted { checkpoint, units: state.units });
        }
        if options.checkpoint_every.is_some_and(|e| since_save >= e) {
            state.save(&checkpoint)?;
            since_save = 0;
        }
        let limit = [options.stop_after.map(|s| s - this_run), options.checkpoint_every.map(|e| e - since_save)]
            .into_iter()
            .flatten()
            .min();
        let mut budget = Budget::new(limit);
        let outcome =
            pool.install(|| experiment.run_task(state.task, state.partial.as_deref(), &mut state.rows, &mut budget))?;
        this_run += budget.used();
        since_save += budget.used();
        state.units += budget.used();
        match outcome {
            TaskOutcome::Finished => {
                state.task += 1;
                state.partial = None;
            }
            TaskOutcome::Paused(partial) => state.partial = partial,
        }
    }

    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let csv = dir.join(experiment.csv_name());
    let mut body = String::with_capacity(state.rows.iter().map(|r| r.len() + 1).sum::<usize>() + 128);
    body.push_str(experiment.csv_header());
    body.push('\n');
    for row in &state.rows {
        body.push_str(row);
        body.push('\n');
    }
    std::fs::write(&csv, body).map_err(CliError::io(&csv))?;

    let summary = dir.join(SUMMARY_FILE);
    let doc = json!({
        "experiment": experiment.kind().name(),
        "config_hash": format!("{:016x}", config_hash(&state.config_text)),
        "deterministic": experiment.deterministic(),
        "csv": experiment.csv_name(),
        "rows": state.rows.len(),
        "results": experiment.summarize(&state.rows)?,
    });
    let mut text = serde_json::to_string_pretty(&doc).map_err(CliError::experiment)?;
    text.push('\n');
    std::fs::write(&summary, text).map_err(CliError::io(&summary))?;
    Ok(RunStatus::Completed(RunReport { csv, summary, rows: state.rows.len() }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_config(dir: &Path) -> String {
        format!(
            "experiment = \"theory_grid\"\noutput_dir = {:?}\nseeds = [3]\n\n[eval]\ngamma = [0.1, 0.5, 0.9]\nz = [1.1, 2.0]\nbuckets = [10, 100]\nslot_choices = [2, 4]\neta_points = 64\n",
            dir.display().to_string()
        )
    }

    #[test]
    fn interrupted_grid_matches_uninterrupted() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        let RunStatus::Completed(full) = run_text(&grid_config(&a), &RunOptions::default()).unwrap() else {
            panic!("expected completion")
        };
        let cfg = tmp.path().join("b.toml");
        std::fs::write(&cfg, grid_config(&b)).unwrap();
        let stop = RunOptions { stop_after: Some(1), ..Default::default() };
        let RunStatus::Interrupted { checkpoint, units } = run_path(&cfg, &stop).unwrap() else {
            panic!("expected interruption")
        };
        assert_eq!(units, 1);
        let mut status = resume(&checkpoint, Some(&cfg), &stop).unwrap();
        while let RunStatus::Interrupted { checkpoint, .. } = status {
            status = resume(&checkpoint, None, &stop).unwrap();
        }
        let RunStatus::Completed(part) = status else { unreachable!() };
        assert_eq!(std::fs::read(&full.csv).unwrap(), std::fs::read(&part.csv).unwrap());
    }

    #[test]
    fn altered_config_is_rejected_on_resume() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tmp.path().join("c.toml");
        std::fs::write(&cfg, grid_config(tmp.path())).unwrap();
        let stop = RunOptions { stop_after: Some(0), ..Default::default() };
        let RunStatus::Interrupted { checkpoint, units } = run_path(&cfg, &stop).unwrap() else { panic!() };
        assert_eq!(units, 0);
        std::fs::write(&cfg, grid_config(tmp.path()) + "\n").unwrap();
        assert!(matches!(resume(&checkpoint, Some(&cfg), &RunOptions::default()), Err(CliError::Config(_))));
    }
}
