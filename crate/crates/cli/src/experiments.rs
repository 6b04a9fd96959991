//! Experiment kinds, each split into a fixed list of tasks.
//!
//! A task does its work in units (one training step, one drift window, one
//! whole sweep seed, ...) and can stop between any two units, handing back
//! an opaque state blob that resumes it exactly. Rows are appended to the
//! shared CSV buffer as soon as a unit completes, so a run's output depends
//! only on the config, never on where it was interrupted.

use std::collections::BTreeMap;

use hotsketch::codec::{Decoder, Encoder};
use hotsketch::eval::{
    matched_memory_recall, optimal_slots_per_bucket, retention_frequency, retention_lower_bound, throughput_bench,
    zipf_retention_lower_bound, EtaGrid, ExactTopK, RetentionTrial, SlidingWindowRecall,
};
use hotsketch::hash::derive_seed;
use hotsketch::trainer::{ModelSpec, TrainConfig, TrainMode, Trainer};
use hotsketch::workload::{LabelModel, ZipfStream, ZipfStreamSpec};
use hotsketch::{FeatureId, SketchConfig, StreamEvent};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ExperimentKind, RunConfig};
use crate::error::CliError;

/// Caps how many units a task may run before pausing.
#[derive(Debug, Clone, Copy)]
pub struct Budget {
    limit: Option<u64>,
    used: u64,
}

impl Budget {
    pub fn new(limit: Option<u64>) -> Self {
        Self { limit, used: 0 }
    }

    pub fn unlimited() -> Self {
        Self::new(None)
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    /// Claims one unit; false once the limit is reached.
    pub fn take(&mut self) -> bool {
        if self.limit.is_some_and(|l| self.used >= l) {
            return false;
        }
        self.used += 1;
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskOutcome {
    Finished,
    /// Budget ran out; carries the state needed to continue the task.
    Paused(Option<Vec<u8>>),
}

pub trait Experiment: Sync {
    fn kind(&self) -> ExperimentKind;
    fn csv_name(&self) -> &'static str;
    fn csv_header(&self) -> &'static str;
    fn task_count(&self) -> usize;
    fn run_task(
        &self,
        task: usize,
        partial: Option<&[u8]>,
        rows: &mut Vec<String>,
        budget: &mut Budget,
    ) -> Result<TaskOutcome, CliError>;
    /// Summary computed from the finished CSV rows.
    fn summarize(&self, rows: &[String]) -> Result<Value, CliError>;
    /// False for wall-clock measurements.
    fn deterministic(&self) -> bool {
        true
    }
}

pub fn build(config: &RunConfig) -> Box<dyn Experiment> {
    match config.experiment {
        ExperimentKind::RecallSweep => Box::new(RecallSweep(config.clone())),
        ExperimentKind::DriftRecall => Box::new(DriftRecall(config.clone())),
        ExperimentKind::TrainCompare => Box::new(TrainCompare(config.clone())),
        ExperimentKind::TheoryGrid => Box::new(TheoryGrid(config.clone())),
        ExperimentKind::Throughput => Box::new(Throughput(config.clone())),
    }
}

fn fields(row: &str) -> Vec<&str> {
    row.split(',').collect()
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, CliError> {
    s.parse().map_err(|_| CliError::Experiment(format!("unparsable value {s:?} in result rows")))
}

fn opt_f64(s: &str) -> Result<Option<f64>, CliError> {
    if s.is_empty() {
        Ok(None)
    } else {
        num(s).map(Some)
    }
}

fn corrupt(what: &str) -> CliError {
    CliError::Checkpoint(crate::checkpoint::CheckpointError::CorruptState(what.into()))
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

// ---------------------------------------------------------------------------

/// Matched-memory recall for every (memory, slots per bucket) pair, one task
/// per seed.
pub struct RecallSweep(RunConfig);

impl Experiment for RecallSweep {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::RecallSweep
    }

    fn csv_name(&self) -> &'static str {
        "recall.csv"
    }

    fn csv_header(&self) -> &'static str {
        "seed,memory_slots,slots_per_bucket,buckets,recall"
    }

    fn task_count(&self) -> usize {
        self.0.seeds.len()
    }

    fn run_task(&self, task: usize, _: Option<&[u8]>, rows: &mut Vec<String>, budget: &mut Budget) -> Result<TaskOutcome, CliError> {
        if !budget.take() {
            return Ok(TaskOutcome::Paused(None));
        }
        let c = &self.0;
        let seed = c.seeds[task];
        let spec = ZipfStreamSpec::new(c.workload.features, c.workload.zipf_exponent, c.workload.events, seed);
        let stream: Vec<FeatureId> = spec.generate().map_err(CliError::experiment)?.map(|e| e.feature).collect();
        let mut oracle = ExactTopK::new(c.eval.top_k);
        for &f in &stream {
            oracle.add(f, 1.0);
        }
        let grid: Vec<(usize, usize)> = c
            .eval
            .memory_slots
            .iter()
            .flat_map(|&m| c.eval.slot_choices.iter().map(move |&s| (m, s)))
            .collect();
        let hash_seed = derive_seed(seed, 0x5ee9);
        let points = grid
            .par_iter()
            .map(|&(m, s)| matched_memory_recall(&stream, &oracle, m, s, hash_seed))
            .collect::<Result<Vec<_>, _>>()
            .map_err(CliError::experiment)?;
        for p in points {
            rows.push(format!("{seed},{},{},{},{:?}", p.memory_slots, p.slots_per_bucket, p.buckets, p.recall));
        }
        Ok(TaskOutcome::Finished)
    }

    fn summarize(&self, rows: &[String]) -> Result<Value, CliError> {
        // (memory, c) -> recall per seed
        let mut table: BTreeMap<(usize, usize), Vec<(u64, f64)>> = BTreeMap::new();
        for row in rows {
            let f = fields(row);
            table.entry((num(f[1])?, num(f[2])?)).or_default().push((num(f[0])?, num(f[4])?));
        }
        let points: Vec<Value> = table
            .iter()
            .map(|(&(m, c), v)| {
                let r: Vec<f64> = v.iter().map(|x| x.1).collect();
                json!({"memory_slots": m, "slots_per_bucket": c, "mean_recall": mean(&r)})
            })
            .collect();
        // middle associativity (8, 16) against the extremes (4, 32)
        let mut checked = 0usize;
        let mut held = 0usize;
        let memories: Vec<usize> = self.0.eval.memory_slots.clone();
        for &seed in &self.0.seeds {
            for &m in &memories {
                let get = |c: usize| table.get(&(m, c)).and_then(|v| v.iter().find(|x| x.0 == seed)).map(|x| x.1);
                if let (Some(r4), Some(r8), Some(r16), Some(r32)) = (get(4), get(8), get(16), get(32)) {
                    checked += 1;
                    if r8.min(r16) >= r4.max(r32) {
                        held += 1;
                    }
                }
            }
        }
        let fraction = if checked == 0 { Value::Null } else { json!(held as f64 / checked as f64) };
        Ok(json!({"points": points, "middle_beats_extremes_fraction": fraction, "middle_beats_extremes_checked": checked}))
    }
}

// ---------------------------------------------------------------------------

/// Sliding-window recall on a drifting stream, one task per seed, one unit
/// per window.
pub struct DriftRecall(RunConfig);

impl DriftRecall {
    fn stream_spec(&self, seed: u64) -> ZipfStreamSpec {
        let c = &self.0;
        let window = c.workload.drift_window;
        ZipfStreamSpec::new(c.workload.features, c.workload.zipf_exponent, window * c.eval.windows, seed)
            .with_drift(window, c.workload.drift_fraction)
    }

    fn sketch_config(&self, seed: u64) -> SketchConfig {
        let c = &self.0;
        let slots = c.sketch.slots_per_bucket;
        SketchConfig::new((c.eval.memory_slots[0] / slots).max(1))
            .with_slots(slots)
            .with_decay(c.sketch.decay_coefficient, c.sketch.decay_interval)
            .with_seed(derive_seed(seed, 0xd71f))
    }
}

impl Experiment for DriftRecall {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::DriftRecall
    }

    fn csv_name(&self) -> &'static str {
        "drift_recall.csv"
    }

    fn csv_header(&self) -> &'static str {
        "seed,window,position,warm_up,local_recall,cumulative_recall"
    }

    fn task_count(&self) -> usize {
        self.0.seeds.len()
    }

    fn run_task(&self, task: usize, partial: Option<&[u8]>, rows: &mut Vec<String>, budget: &mut Budget) -> Result<TaskOutcome, CliError> {
        let seed = self.0.seeds[task];
        let window = self.0.workload.drift_window;
        let mut eval = match partial {
            Some(bytes) => SlidingWindowRecall::decode(&mut Decoder::new(bytes)).map_err(|e| corrupt(&e.to_string()))?,
            None => SlidingWindowRecall::new(self.sketch_config(seed), self.0.eval.top_k, window).map_err(CliError::experiment)?,
        };
        let mut stream = self.stream_spec(seed).generate().map_err(CliError::experiment)?;
        stream.skip_to(eval.position());
        while eval.position() < stream.spec().event_count {
            if !budget.take() {
                let mut enc = Encoder::new();
                eval.encode(&mut enc);
                return Ok(TaskOutcome::Paused(Some(enc.finish())));
            }
            let mut report = None;
            for event in stream.by_ref().take(window as usize) {
                report = eval.observe(event.feature).map_err(CliError::experiment)?.or(report);
            }
            let r = report.ok_or_else(|| CliError::Experiment("window closed without a report".into()))?;
            rows.push(format!(
                "{seed},{},{},{},{:?},{:?}",
                r.window, r.position, r.warm_up as u8, r.local_recall, r.cumulative_recall
            ));
        }
        Ok(TaskOutcome::Finished)
    }

    fn summarize(&self, rows: &[String]) -> Result<Value, CliError> {
        let mut per_seed: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
        for row in rows {
            let f = fields(row);
            if f[3] == "1" {
                continue;
            }
            let e = per_seed.entry(num(f[0])?).or_insert((1.0, 1.0, 0));
            e.0 = e.0.min(num(f[4])?);
            e.1 = e.1.min(num(f[5])?);
            e.2 += 1;
        }
        let seeds: Vec<Value> = per_seed
            .iter()
            .map(|(s, v)| json!({"seed": s, "min_local_recall": v.0, "min_cumulative_recall": v.1, "windows": v.2}))
            .collect();
        let min_local = per_seed.values().map(|v| v.0).fold(1.0, f64::min);
        let min_cumulative = per_seed.values().map(|v| v.1).fold(1.0, f64::min);
        Ok(json!({"seeds": seeds, "min_local_recall": min_local, "min_cumulative_recall": min_cumulative}))
    }
}

// ---------------------------------------------------------------------------

/// Paired training runs, one task per (seed, mode), one unit per step.
pub struct TrainCompare(RunConfig);

impl TrainCompare {
    fn task_params(&self, task: usize) -> (u64, TrainMode) {
        let modes = &self.0.trainer.modes;
        (self.0.seeds[task / modes.len()], modes[task % modes.len()].into())
    }

    fn model_spec(&self, seed: u64) -> ModelSpec {
        let c = &self.0;
        let mut spec = ModelSpec::with_compression(c.workload.features, c.store.dim, c.store.compression_ratio);
        spec.hot_percentage = c.store.hot_percentage;
        spec.levels = c.store.levels;
        spec.level_split = c.store.level_split.clone();
        spec.hot_threshold = c.sketch.hot_threshold;
        spec.medium_threshold = c.sketch.medium_threshold;
        spec.decay_coefficient = c.sketch.decay_coefficient;
        spec.store_seed = derive_seed(seed, 0x5707);
        spec.sketch_seed = derive_seed(seed, 0x5c7c);
        spec
    }

    fn train_config(&self, seed: u64, mode: TrainMode) -> TrainConfig {
        let t = &self.0.trainer;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            steps: t.steps,
            maintenance_interval: t.maintenance_interval,
            mode,
            importance: t.importance.into(),
            seed: derive_seed(seed, 0x7a1e),
        }
    }

    fn stream(&self, seed: u64) -> Result<ZipfStream, CliError> {
        let c = &self.0;
        let events = c.trainer.steps * c.trainer.batch_size as u64;
        let mut spec = ZipfStreamSpec::new(c.workload.features, c.workload.zipf_exponent, events, seed)
            .with_labels(LabelModel { weight_std: c.workload.weight_std, noise_std: c.workload.noise_std });
        if c.workload.drift_window > 0 {
            spec = spec.with_drift(c.workload.drift_window, c.workload.drift_fraction);
        }
        spec.generate().map_err(CliError::experiment)
    }

    pub fn new_trainer(&self, seed: u64, mode: TrainMode) -> Result<Trainer, CliError> {
        let config = self.train_config(seed, mode);
        let mut trainer = Trainer::from_spec(config.clone(), &self.model_spec(seed)).map_err(CliError::experiment)?;
        if self.0.trainer.trace_deviation {
            trainer
                .attach_shadow(&TrainConfig { mode: TrainMode::Uncompressed, ..config })
                .map_err(CliError::experiment)?;
        }
        Ok(trainer)
    }
}

impl Experiment for TrainCompare {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::TrainCompare
    }

    fn csv_name(&self) -> &'static str {
        "train_metrics.csv"
    }

    fn csv_header(&self) -> &'static str {
        "seed,mode,step,loss,hot_hits,medium_hits,cold_hits,migrations,epsilon,epsilon_hot"
    }

    fn task_count(&self) -> usize {
        self.0.seeds.len() * self.0.trainer.modes.len()
    }

    fn run_task(&self, task: usize, partial: Option<&[u8]>, rows: &mut Vec<String>, budget: &mut Budget) -> Result<TaskOutcome, CliError> {
        let (seed, mode) = self.task_params(task);
        let (mut trainer, position) = match partial {
            Some(bytes) => {
                let mut dec = Decoder::new(bytes);
                let position = dec.u64().map_err(|_| corrupt("truncated stream cursor"))?;
                let trainer = Trainer::load(dec.block().map_err(|_| corrupt("truncated trainer"))?)
                    .map_err(|e| corrupt(&e.to_string()))?;
                (trainer, position)
            }
            None => (self.new_trainer(seed, mode)?, 0),
        };
        let mut stream = self.stream(seed)?;
        stream.skip_to(position);
        let batch_size = self.0.trainer.batch_size;
        let mut batch: Vec<StreamEvent> = Vec::with_capacity(batch_size);
        while trainer.step_count() < self.0.trainer.steps {
            if !budget.take() {
                let mut enc = Encoder::new();
                enc.u64(stream.position()).block(&trainer.save());
                return Ok(TaskOutcome::Paused(Some(enc.finish())));
            }
            batch.clear();
            batch.extend(stream.by_ref().take(batch_size));
            if batch.is_empty() {
                break;
            }
            let m = trainer.step(&batch).map_err(CliError::experiment)?;
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
            rows.push(format!(
                "{seed},{},{},{:?},{},{},{},{},{},{}",
                mode.name(),
                m.step,
                m.loss,
                m.hot_hits,
                m.medium_hits,
                m.cold_hits,
                m.migrations,
                opt(m.epsilon),
                opt(m.epsilon_hot)
            ));
        }
        Ok(TaskOutcome::Finished)
    }

    fn summarize(&self, rows: &[String]) -> Result<Value, CliError> {
        let steps = self.0.trainer.steps;
        let tail_start = steps - steps / 4;
        #[derive(Default)]
        struct Acc {
            tail_loss: Vec<f64>,
            eps2: Vec<f64>,
            eps2_hot: Vec<f64>,
            migrations: u64,
        }
        let mut acc: BTreeMap<(u64, String), Acc> = BTreeMap::new();
        for row in rows {
            let f = fields(row);
            let a = acc.entry((num(f[0])?, f[1].to_string())).or_default();
            let step: u64 = num(f[2])?;
            if step > tail_start {
                a.tail_loss.push(num(f[3])?);
            }
            a.migrations += num::<u64>(f[7])?;
            if let Some(e) = opt_f64(f[8])? {
                a.eps2.push(e * e);
            }
            if let Some(e) = opt_f64(f[9])? {
                a.eps2_hot.push(e * e);
            }
        }
        let mut runs = Vec::new();
        let mut by_mode: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for ((seed, mode), a) in &acc {
            let loss = mean(&a.tail_loss);
            let eps2 = if a.eps2.is_empty() { None } else { Some(mean(&a.eps2)) };
            let eps2_hot = if a.eps2_hot.is_empty() { None } else { Some(mean(&a.eps2_hot)) };
            runs.push(json!({
                "seed": seed, "mode": mode, "last_quartile_loss": loss,
                "mean_epsilon_sq": eps2, "mean_epsilon_sq_hot": eps2_hot, "migrations": a.migrations,
            }));
            let e = by_mode.entry(mode.clone()).or_default();
            e.0.push(loss);
            if let Some(x) = eps2 {
                e.1.push(x);
            }
        }
        let mut out = serde_json::Map::new();
        out.insert("runs".into(), Value::Array(runs));
        for (mode, (loss, eps2)) in by_mode {
            out.insert(format!("{mode}_loss"), json!(mean(&loss)));
            if !eps2.is_empty() {
                out.insert(format!("{mode}_epsilon_sq"), json!(mean(&eps2)));
            }
        }
        Ok(Value::Object(out))
    }
}

// ---------------------------------------------------------------------------

/// Closed-form, Zipf and (optionally) Monte-Carlo retention values, one task
/// per `γ`.
pub struct TheoryGrid(RunConfig);

impl Experiment for TheoryGrid {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::TheoryGrid
    }

    fn csv_name(&self) -> &'static str {
        "theory.csv"
    }

    fn csv_header(&self) -> &'static str {
        "bound,gamma,z,buckets,slots_per_bucket,value,eta,trials"
    }

    fn task_count(&self) -> usize {
        self.0.eval.gamma.len()
    }

    fn run_task(&self, task: usize, _: Option<&[u8]>, rows: &mut Vec<String>, budget: &mut Budget) -> Result<TaskOutcome, CliError> {
        if !budget.take() {
            return Ok(TaskOutcome::Paused(None));
        }
        let e = &self.0.eval;
        let gamma = e.gamma[task];
        let grid = EtaGrid::default().with_points(e.eta_points);
        for &w in &e.buckets {
            for &c in &e.slot_choices {
                if c >= 2 {
                    let v = retention_lower_bound(gamma, w, c).map_err(CliError::experiment)?;
                    rows.push(format!("closed_form,{gamma:?},,{w},{c},{v:?},,"));
                }
            }
        }
        let zipf_points: Vec<(f64, usize, usize)> = e
            .z
            .iter()
            .flat_map(|&z| e.buckets.iter().flat_map(move |&w| e.slot_choices.iter().map(move |&c| (z, w, c))))
            .collect();
        let zipf = zipf_points
            .par_iter()
            .map(|&(z, w, c)| zipf_retention_lower_bound(gamma, z, w, c, &grid))
            .collect::<Result<Vec<_>, _>>()
            .map_err(CliError::experiment)?;
        for (&(z, w, c), b) in zipf_points.iter().zip(zipf) {
            let eta = b.eta.map_or(String::new(), |x| format!("{x:?}"));
            rows.push(format!("zipf,{gamma:?},{z:?},{w},{c},{:?},{eta},", b.probability));
        }
        if e.trials > 0 {
            for (i, &w) in e.buckets.iter().enumerate() {
                for (j, &c) in e.slot_choices.iter().enumerate() {
                    if c < 2 || w * c > e.trial_max_slots {
                        continue;
                    }
                    let stream_len = (20 * w * c).max(1000);
                    let spec = RetentionTrial { gamma, buckets: w, slots_per_bucket: c, stream_len, others: stream_len as u64 };
                    let seed = derive_seed(self.0.seeds[0], (task * 1_000_000 + i * 1000 + j) as u64);
                    let est = retention_frequency(&spec, e.trials, seed).map_err(CliError::experiment)?;
                    rows.push(format!("monte_carlo,{gamma:?},,{w},{c},{:?},,{}", est.frequency, est.trials));
                }
            }
        }
        Ok(TaskOutcome::Finished)
    }

    fn summarize(&self, rows: &[String]) -> Result<Value, CliError> {
        let mut zipf: BTreeMap<(u64, u64, usize, usize), f64> = BTreeMap::new();
        let mut closed = 0usize;
        let mut mc_violations = 0usize;
        let mut mc_points = 0usize;
        let mut closed_values: BTreeMap<(u64, usize, usize), f64> = BTreeMap::new();
        for row in rows {
            let f = fields(row);
            let gamma: f64 = num(f[1])?;
            let w: usize = num(f[3])?;
            let c: usize = num(f[4])?;
            let v: f64 = num(f[5])?;
            match f[0] {
                "closed_form" => {
                    closed += 1;
                    closed_values.insert((gamma.to_bits(), w, c), v);
                }
                "zipf" => {
                    let z: f64 = num(f[2])?;
                    zipf.insert((gamma.to_bits(), z.to_bits(), w, c), v);
                }
                "monte_carlo" => {
                    let trials: f64 = num(f[7])?;
                    if let Some(&bound) = closed_values.get(&(gamma.to_bits(), w, c)) {
                        mc_points += 1;
                        let se = (bound * (1.0 - bound) / trials).sqrt();
                        if v < bound - 3.0 * se {
                            mc_violations += 1;
                        }
                    }
                }
                other => return Err(CliError::Experiment(format!("unknown bound kind {other:?}"))),
            }
        }
        // non-decreasing along each axis, holding the other three fixed
        let axis_ok = |axis: usize| {
            let key = |k: &(u64, u64, usize, usize)| -> (f64, f64, f64, f64) {
                (f64::from_bits(k.0), f64::from_bits(k.1), k.2 as f64, k.3 as f64)
            };
            let mut lines: BTreeMap<Vec<u64>, Vec<(f64, f64)>> = BTreeMap::new();
            for (k, &v) in &zipf {
                let t = key(k);
                let coords = [t.0, t.1, t.2, t.3];
                let rest: Vec<u64> = coords.iter().enumerate().filter(|(i, _)| *i != axis).map(|(_, x)| x.to_bits()).collect();
                lines.entry(rest).or_default().push((coords[axis], v));
            }
            lines.values_mut().all(|line| {
                line.sort_by(|a, b| a.0.total_cmp(&b.0));
                line.windows(2).all(|p| p[1].1 >= p[0].1 - 1e-12)
            })
        };
        let optimal: Vec<Value> = self
            .0
            .eval
            .z
            .iter()
            .map(|&z| {
                let r = optimal_slots_per_bucket(z).expect("validated z > 1");
                json!({"z": z, "exact": r.exact, "nearest": r.nearest})
            })
            .collect();
        Ok(json!({
            "closed_form_points": closed,
            "zipf_points": zipf.len(),
            "monotone": {"gamma": axis_ok(0), "z": axis_ok(1), "buckets": axis_ok(2), "slots_per_bucket": axis_ok(3)},
            "monte_carlo_points": mc_points,
            "monte_carlo_below_bound": mc_violations,
            "optimal_slots_per_bucket": optimal,
        }))
    }
}

// ---------------------------------------------------------------------------

/// Serialized insert/query throughput for every (buckets, slots) pair, one
/// task per pair.
pub struct Throughput(RunConfig);

impl Throughput {
    fn points(&self) -> Vec<(usize, usize)> {
        let e = &self.0.eval;
        e.buckets.iter().flat_map(|&w| e.slot_choices.iter().map(move |&c| (w, c))).collect()
    }
}

impl Experiment for Throughput {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Throughput
    }

    fn csv_name(&self) -> &'static str {
        "throughput.csv"
    }

    fn csv_header(&self) -> &'static str {
        "buckets,slots_per_bucket,ops,insert_ops_per_sec,query_ops_per_sec"
    }

    fn task_count(&self) -> usize {
        self.points().len()
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn run_task(&self, task: usize, _: Option<&[u8]>, rows: &mut Vec<String>, budget: &mut Budget) -> Result<TaskOutcome, CliError> {
        if !budget.take() {
            return Ok(TaskOutcome::Paused(None));
        }
        let c = &self.0;
        let (w, slots) = self.points()[task];
        let spec = ZipfStreamSpec::new(c.workload.features, c.workload.zipf_exponent, c.workload.events, c.seeds[0]);
        let features: Vec<FeatureId> = spec.generate().map_err(CliError::experiment)?.map(|e| e.feature).collect();
        let config = SketchConfig::new(w).with_slots(slots).with_seed(derive_seed(c.seeds[0], 0x7490));
        let mut best: Option<(usize, f64, f64)> = None;
        for _ in 0..c.eval.bench_repeats {
            if let Some(s) = throughput_bench(config.clone(), &features).map_err(CliError::experiment)? {
                let b = best.get_or_insert((s.ops, 0.0, 0.0));
                b.1 = b.1.max(s.insert_ops_per_sec);
                b.2 = b.2.max(s.query_ops_per_sec);
            }
        }
        if let Some((ops, ins, qry)) = best {
            rows.push(format!("{w},{slots},{ops},{ins:.1},{qry:.1}"));
        }
        Ok(TaskOutcome::Finished)
    }

    fn summarize(&self, rows: &[String]) -> Result<Value, CliError> {
        let mut by_w: BTreeMap<usize, Vec<(usize, f64, f64)>> = BTreeMap::new();
        for row in rows {
            let f = fields(row);
            by_w.entry(num(f[0])?).or_default().push((num(f[1])?, num(f[3])?, num(f[4])?));
        }
        let series: Vec<Value> = by_w
            .iter_mut()
            .map(|(w, pts)| {
                pts.sort_by_key(|p| p.0);
                let insert_decreasing = pts.windows(2).all(|p| p[1].1 <= p[0].1);
                let query_decreasing = pts.windows(2).all(|p| p[1].2 <= p[0].2);
                json!({
                    "buckets": w,
                    "slots_per_bucket": pts.iter().map(|p| p.0).collect::<Vec<_>>(),
                    "insert_ops_per_sec": pts.iter().map(|p| p.1).collect::<Vec<_>>(),
                    "query_ops_per_sec": pts.iter().map(|p| p.2).collect::<Vec<_>>(),
                    "insert_decreasing": insert_decreasing,
                    "query_decreasing": query_decreasing,
                })
            })
            .collect();
        Ok(json!({"series": series, "reference_ops_per_sec": 1e7}))
    }
}
