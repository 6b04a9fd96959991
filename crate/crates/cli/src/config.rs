//! Run configuration: a TOML file with a few top-level keys and one flat
//! section per module.
//!
//! Only `experiment`, `output_dir` and `seeds` are required; every section
//! falls back to defaults. `HOTSKETCH_OUTPUT_DIR` and `HOTSKETCH_THREADS`
//! override the output directory and thread count.

use std::fmt;
use std::path::{Path, PathBuf};

use hotsketch::importance::ImportanceMode;
use hotsketch::trainer::TrainMode;
use serde::Deserialize;

use crate::error::CliError;

pub const OUTPUT_DIR_ENV: &str = "HOTSKETCH_OUTPUT_DIR";
pub const THREADS_ENV: &str = "HOTSKETCH_THREADS";

/// Configuration problem, located by the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "config: {}", self.message)
        } else {
            write!(f, "config field `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RecallSweep,
    DriftRecall,
    TrainCompare,
    TheoryGrid,
    Throughput,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::RecallSweep => "recall_sweep",
            ExperimentKind::DriftRecall => "drift_recall",
            ExperimentKind::TrainCompare => "train_compare",
            ExperimentKind::TheoryGrid => "theory_grid",
            ExperimentKind::Throughput => "throughput",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Tiered,
    Hash,
    Uncompressed,
}

impl From<ModeName> for TrainMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Tiered => TrainMode::Tiered,
            ModeName::Hash => TrainMode::HashOnly,
            ModeName::Uncompressed => TrainMode::Uncompressed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceName {
    GradientNorm,
    Frequency,
}

impl From<ImportanceName> for ImportanceMode {
    fn from(m: ImportanceName) -> Self {
        match m {
            ImportanceName::GradientNorm => ImportanceMode::GradientNorm,
            ImportanceName::Frequency => ImportanceMode::Frequency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub workload: WorkloadSection,
    #[serde(default)]
    pub sketch: SketchSection,
    #[serde(default)]
    pub store: StoreSection,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    pub features: u64,
    pub zipf_exponent: f64,
    /// Stream length for the sketch-only experiments.
    pub events: u64,
    /// Events per drift window; 0 means a stationary stream.
    pub drift_window: u64,
    pub drift_fraction: f64,
    pub weight_std: f64,
    pub noise_std: f64,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        Self {
            features: 100_000,
            zipf_exponent: 1.1,
            events: 1_000_000,
            drift_window: 0,
            drift_fraction: 0.1,
            weight_std: 2.0,
            noise_std: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchSection {
    pub slots_per_bucket: usize,
    pub hot_threshold: f64,
    pub medium_threshold: f64,
    pub decay_coefficient: f64,
    /// Events between automatic decays; 0 disables them.
    pub decay_interval: u64,
}

impl Default for SketchSection {
    fn default() -> Self {
        Self { slots_per_bucket: 4, hot_threshold: 1.0, medium_threshold: 0.1, decay_coefficient: 0.98, decay_interval: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    pub dim: usize,
    pub compression_ratio: f64,
    pub hot_percentage: f64,
    pub levels: usize,
    pub level_split: Vec<f64>,
}

impl Default for StoreSection {
    fn default() -> Self {
        Self { dim: 16, compression_ratio: 100.0, hot_percentage: 0.7, levels: 2, level_split: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub maintenance_interval: u64,
    pub importance: ImportanceName,
    pub modes: Vec<ModeName>,
    pub trace_deviation: bool,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            batch_size: 64,
            steps: 1000,
            maintenance_interval: 100,
            importance: ImportanceName::GradientNorm,
            modes: vec![ModeName::Tiered, ModeName::Hash],
            trace_deviation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub top_k: usize,
    /// Total sketch slots per sweep point (recall sweep) or the single
    /// sketch size (drift recall, first entry).
    pub memory_slots: Vec<usize>,
    pub slot_choices: Vec<usize>,
    /// Bucket counts for the bound grid and the throughput bench.
    pub buckets: Vec<usize>,
    pub windows: u64,
    pub gamma: Vec<f64>,
    pub z: Vec<f64>,
    /// Monte-Carlo trials per closed-form grid point; 0 skips them.
    pub trials: usize,
    /// Monte-Carlo runs only where buckets * slots stays within this.
    pub trial_max_slots: usize,
    pub eta_points: usize,
    pub bench_repeats: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            top_k: 1000,
            memory_slots: vec![1536, 2048, 3072, 4096, 6144, 8192],
            slot_choices: vec![4, 8, 16, 32],
            buckets: vec![10_000],
            windows: 20,
            gamma: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            z: vec![1.05, 1.1, 1.2, 1.5, 2.0],
            trials: 0,
            trial_max_slots: 1024,
            eta_points: 2048,
            bench_repeats: 5,
        }
    }
}

fn positive_f64(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("must be a positive finite number, got {v}")))
    }
}

fn nonzero(path: &str, v: u64) -> Result<(), ConfigError> {
    if v > 0 {
        Ok(())
    } else {
        Err(ConfigError::new(path, "must be positive"))
    }
}

fn nonempty<T>(path: &str, v: &[T]) -> Result<(), ConfigError> {
    if v.is_empty() {
        Err(ConfigError::new(path, "must not be empty"))
    } else {
        Ok(())
    }
}

impl RunConfig {
    /// Parses and validates `text`, then applies environment overrides.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::parse_without_env(text)?;
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                config.output_dir = PathBuf::from(dir);
            }
        }
        if let Ok(threads) = std::env::var(THREADS_ENV) {
            config.threads = threads
                .parse()
                .map_err(|_| ConfigError::new("threads", format!("{THREADS_ENV}={threads:?} is not a count")))?;
        }
        Ok(config)
    }

    pub fn parse_without_env(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::new("", e.message().to_string()))?;
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(path, e.into_inner().message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        nonempty("seeds", &self.seeds)?;
        let w = &self.workload;
        nonzero("workload.features", w.features)?;
        positive_f64("workload.noise_std", w.noise_std)?;
        if !(w.drift_fraction >= 0.0 && w.drift_fraction <= 1.0) {
            return Err(ConfigError::new("workload.drift_fraction", "must lie in [0, 1]"));
        }
        let s = &self.sketch;
        nonzero("sketch.slots_per_bucket", s.slots_per_bucket as u64)?;
        if !(s.decay_coefficient > 0.0 && s.decay_coefficient <= 1.0) {
            return Err(ConfigError::new("sketch.decay_coefficient", "must lie in (0, 1]"));
        }
        match self.experiment {
            ExperimentKind::RecallSweep => {
                nonzero("workload.events", w.events)?;
                nonzero("eval.top_k", self.eval.top_k as u64)?;
                nonempty("eval.memory_slots", &self.eval.memory_slots)?;
                nonempty("eval.slot_choices", &self.eval.slot_choices)?;
                for &c in &self.eval.slot_choices {
                    nonzero("eval.slot_choices", c as u64)?;
                }
            }
            ExperimentKind::DriftRecall => {
                nonzero("workload.drift_window", w.drift_window)?;
                nonzero("eval.windows", self.eval.windows)?;
                nonzero("eval.top_k", self.eval.top_k as u64)?;
                nonempty("eval.memory_slots", &self.eval.memory_slots)?;
            }
            ExperimentKind::TrainCompare => {
                let t = &self.trainer;
                positive_f64("trainer.learning_rate", t.learning_rate)?;
                nonzero("trainer.batch_size", t.batch_size as u64)?;
                nonzero("trainer.steps", t.steps)?;
                nonzero("trainer.maintenance_interval", t.maintenance_interval)?;
                nonempty("trainer.modes", &t.modes)?;
                positive_f64("store.compression_ratio", self.store.compression_ratio)?;
                nonzero("store.dim", self.store.dim as u64)?;
                nonzero("store.levels", self.store.levels as u64)?;
                if !(self.store.hot_percentage > 0.0 && self.store.hot_percentage <= 1.0) {
                    return Err(ConfigError::new("store.hot_percentage", "must lie in (0, 1]"));
                }
            }
            ExperimentKind::TheoryGrid => {
                nonempty("eval.gamma", &self.eval.gamma)?;
                nonempty("eval.buckets", &self.eval.buckets)?;
                nonempty("eval.slot_choices", &self.eval.slot_choices)?;
                nonzero("eval.eta_points", self.eval.eta_points as u64)?;
                for &g in &self.eval.gamma {
                    if !(g > 0.0 && g < 1.0) {
                        return Err(ConfigError::new("eval.gamma", format!("{g} is outside (0, 1)")));
                    }
                }
                for &z in &self.eval.z {
                    if !(z > 1.0) {
                        return Err(ConfigError::new("eval.z", format!("{z} must exceed 1")));
                    }
                }
            }
            ExperimentKind::Throughput => {
                nonzero("workload.events", w.events)?;
                nonempty("eval.slot_choices", &self.eval.slot_choices)?;
                nonempty("eval.buckets", &self.eval.buckets)?;
                nonzero("eval.bench_repeats", self.eval.bench_repeats as u64)?;
            }
        }
        Ok(())
    }
}

/// Stable 64-bit FNV-1a digest of the configuration text.
pub fn config_hash(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "experiment = \"theory_grid\"\noutput_dir = \"out\"\nseeds = [1]\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::parse_without_env(MINIMAL).unwrap();
        assert_eq!(c.experiment, ExperimentKind::TheoryGrid);
        assert_eq!(c.store.levels, 2);
        assert_eq!(c.trainer.maintenance_interval, 100);
    }

    #[test]
    fn missing_field_is_named() {
        let err = RunConfig::parse_without_env("experiment = \"theory_grid\"\noutput_dir = \"x\"\n").unwrap_err();
        assert!(err.message.contains("seeds"), "{err}");
    }

    #[test]
    fn nested_type_error_has_path() {
        let text = format!("{MINIMAL}[trainer]\nlearning_rate = \"fast\"\n");
        let err = RunConfig::parse_without_env(&text).unwrap_err();
        assert_eq!(err.path, "trainer.learning_rate");
    }

    #[test]
    fn unknown_field_rejected() {
        let text = format!("{MINIMAL}[sketch]\nslots = 4\n");
        let err = RunConfig::parse_without_env(&text).unwrap_err();
        assert!(err.path.starts_with("sketch"), "{err}");
        assert!(err.message.contains("slots"));
    }

    #[test]
    fn semantic_validation_has_path() {
        let text = format!("{MINIMAL}[eval]\ngamma = [0.5, 1.5]\n");
        assert_eq!(RunConfig::parse_without_env(&text).unwrap_err().path, "eval.gamma");
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(config_hash("a"), 0xaf63_dc4c_8601_ec8c);
        assert_ne!(config_hash(MINIMAL), config_hash(&format!("{MINIMAL} ")));
    }
}
