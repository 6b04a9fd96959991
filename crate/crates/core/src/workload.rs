//! Synthetic Zipf streams with drift, and CSV trace files.
//!
//! Ranks are drawn with `P(rank i) ∝ i^-z` and mapped to feature ids through
//! a seeded permutation, so ids carry no rank information. With drift
//! enabled, every `window_events` events a random `p`-fraction of ranks has
//! its features reshuffled among themselves.
//!
//! Labels come from a planted model: each feature gets a hidden weight
//! `w_f ~ N(0, weight_std²)` and an event is positive when
//! `w_f + noise_std · N(0, 1) > 0`. With `noise_std = 0` the labels are a
//! fixed function of the feature, which a per-feature embedding can separate.
//!
//! Traces are headerless CSV, one event per line: `feature_id,label`
//! optionally followed by numeric context columns. Paths ending in `.gz` are
//! gzip-compressed.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use thiserror::Error;

use crate::hash;
use crate::sketch::FeatureId;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid stream spec: {0}")]
    InvalidSpec(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl WorkloadError {
    /// 1-based line of a parse error.
    pub fn line(&self) -> Option<usize> {
        match self {
            WorkloadError::Parse { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamEvent {
    pub feature: FeatureId,
    pub label: bool,
    /// Optional numeric context columns; empty when absent.
    pub context: Vec<f64>,
}

impl StreamEvent {
    pub fn new(feature: u64, label: bool) -> Self {
        Self { feature: FeatureId(feature), label, context: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftSpec {
    pub window_events: u64,
    /// Fraction `p` of ranks reshuffled at each window boundary.
    pub permutation_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelModel {
    pub weight_std: f64,
    pub noise_std: f64,
}

impl Default for LabelModel {
    fn default() -> Self {
        Self { weight_std: 2.0, noise_std: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZipfStreamSpec {
    /// Universe size; feature ids lie in `[0, n)`.
    pub n: u64,
    /// Zipf exponent `z ≥ 0`; `0` is uniform.
    pub z: f64,
    pub event_count: u64,
    pub seed: u64,
    pub drift: Option<DriftSpec>,
    pub labels: LabelModel,
}

impl ZipfStreamSpec {
    pub fn new(n: u64, z: f64, event_count: u64, seed: u64) -> Self {
        Self { n, z, event_count, seed, drift: None, labels: LabelModel::default() }
    }

    pub fn with_drift(mut self, window_events: u64, permutation_fraction: f64) -> Self {
        self.drift = Some(DriftSpec { window_events, permutation_fraction });
        self
    }

    pub fn with_labels(mut self, labels: LabelModel) -> Self {
        self.labels = labels;
        self
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::InvalidSpec(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.n > u32::MAX as u64 {
            return bad(format!("n = {} exceeds the supported universe", self.n));
        }
        if !(self.z.is_finite() && self.z >= 0.0) {
            return bad(format!("z = {} must be finite and non-negative", self.z));
        }
        if let Some(d) = self.drift {
            if d.window_events == 0 {
                return bad("drift window must be positive".into());
            }
            if !(0.0..=1.0).contains(&d.permutation_fraction) {
                return bad(format!("drift fraction {} outside [0, 1]", d.permutation_fraction));
            }
        }
        let l = self.labels;
        if !(l.weight_std.is_finite() && l.weight_std >= 0.0 && l.noise_std.is_finite() && l.noise_std >= 0.0) {
            return bad("label standard deviations must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<ZipfStream, WorkloadError> {
        ZipfStream::new(self.clone())
    }

    /// Zipf mass of rank `i` (1-based): `i^-z / Σ_j j^-z`.
    pub fn rank_probability(&self, rank: u64) -> f64 {
        let norm: f64 = (1..=self.n).map(|j| (j as f64).powf(-self.z)).sum();
        (rank as f64).powf(-self.z) / norm
    }
}

/// Deterministic event iterator for a [`ZipfStreamSpec`].
#[derive(Debug, Clone)]
pub struct ZipfStream {
    spec: ZipfStreamSpec,
    zipf: Zipf<f64>,
    rank_to_feature: Vec<u32>,
    feature_weight: Vec<f64>,
    sample_rng: ChaCha8Rng,
    drift_rng: ChaCha8Rng,
    position: u64,
}

impl ZipfStream {
    pub fn new(spec: ZipfStreamSpec) -> Result<Self, WorkloadError> {
        spec.validate()?;
        let n = spec.n as usize;
        let zipf = Zipf::new(spec.n as f64, spec.z).map_err(|e| WorkloadError::InvalidSpec(e.to_string()))?;
        let mut perm_rng = ChaCha8Rng::seed_from_u64(hash::derive_seed(spec.seed, 1));
        let mut rank_to_feature: Vec<u32> = (0..n as u32).collect();
        rank_to_feature.shuffle(&mut perm_rng);
        let mut weight_rng = ChaCha8Rng::seed_from_u64(hash::derive_seed(spec.seed, 2));
        let feature_weight = (0..n)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut weight_rng);
                g * spec.labels.weight_std
            })
            .collect();
        Ok(Self {
            zipf,
            rank_to_feature,
            feature_weight,
            sample_rng: ChaCha8Rng::seed_from_u64(hash::derive_seed(spec.seed, 3)),
            drift_rng: ChaCha8Rng::seed_from_u64(hash::derive_seed(spec.seed, 4)),
            position: 0,
            spec,
        })
    }

    pub fn spec(&self) -> &ZipfStreamSpec {
        &self.spec
    }

    /// Events emitted so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    /// Feature currently mapped to 0-based rank `rank`.
    pub fn feature_at_rank(&self, rank: usize) -> FeatureId {
        FeatureId(self.rank_to_feature[rank] as u64)
    }

    pub fn planted_weight(&self, feature: FeatureId) -> f64 {
        self.feature_weight[feature.0 as usize]
    }

    /// Advances to `position` by generating and discarding events.
    pub fn skip_to(&mut self, position: u64) {
        while self.position < position && self.next().is_some() {}
    }

    fn apply_drift(&mut self, fraction: f64) {
        let n = self.rank_to_feature.len();
        let m = ((fraction * n as f64).round() as usize).min(n);
        if m < 2 {
            return;
        }
        let mut ranks = index::sample(&mut self.drift_rng, n, m).into_vec();
        ranks.sort_unstable();
        let mut features: Vec<u32> = ranks.iter().map(|&r| self.rank_to_feature[r]).collect();
        features.shuffle(&mut self.drift_rng);
        for (r, f) in ranks.into_iter().zip(features) {
            self.rank_to_feature[r] = f;
        }
    }
}

impl Iterator for ZipfStream {
    type Item = StreamEvent;

    fn next(&mut self) -> Option<StreamEvent> {
        if self.position >= self.spec.event_count {
            return None;
        }
        if let Some(drift) = self.spec.drift {
            if self.position > 0 && self.position % drift.window_events == 0 {
                self.apply_drift(drift.permutation_fraction);
            }
        }
        let n = self.rank_to_feature.len();
        let rank = (self.zipf.sample(&mut self.sample_rng) as usize).clamp(1, n) - 1;
        let feature = self.rank_to_feature[rank];
        let noise: f64 = self.sample_rng.sample(StandardNormal);
        let label = self.feature_weight[feature as usize] + self.spec.labels.noise_std * noise > 0.0;
        self.position += 1;
        Some(StreamEvent { feature: FeatureId(feature as u64), label, context: Vec::new() })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.spec.event_count - self.position) as usize;
        (left, Some(left))
    }
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn parse_line(line: &str) -> Result<StreamEvent, String> {
    let mut cols = line.split(',').map(str::trim);
    let feature = cols.next().unwrap_or("");
    let feature: u64 = feature.parse().map_err(|_| format!("bad feature id {feature:?}"))?;
    if feature == FeatureId::EMPTY.0 {
        return Err("feature id is reserved".into());
    }
    let label = match cols.next() {
        Some("0") => false,
        Some("1") => true,
        Some(other) => return Err(format!("label must be 0 or 1, got {other:?}")),
        None => return Err("missing label column".into()),
    };
    let context = cols
        .map(|c| c.parse::<f64>().map_err(|_| format!("bad context value {c:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StreamEvent { feature: FeatureId(feature), label, context })
}

/// Streaming reader over a trace file. Blank lines are skipped.
pub struct TraceReader {
    path: PathBuf,
    lines: io::Lines<Box<dyn BufRead>>,
    line_no: usize,
}

impl TraceReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, WorkloadError> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|source| WorkloadError::Io { path: path.clone(), source })?;
        let reader: Box<dyn BufRead> =
            if is_gzip(&path) { Box::new(BufReader::new(GzDecoder::new(file))) } else { Box::new(BufReader::new(file)) };
        Ok(Self { path, lines: reader.lines(), line_no: 0 })
    }
}

impl Iterator for TraceReader {
    type Item = Result<StreamEvent, WorkloadError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(source) => return Some(Err(WorkloadError::Io { path: self.path.clone(), source })),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_line(&line).map_err(|message| WorkloadError::Parse {
                path: self.path.clone(),
                line: self.line_no,
                message,
            }));
        }
    }
}

pub fn ingest_trace(path: impl AsRef<Path>) -> Result<Vec<StreamEvent>, WorkloadError> {
    TraceReader::open(path)?.collect()
}

pub fn export_trace<'a>(
    path: impl AsRef<Path>,
    events: impl IntoIterator<Item = &'a StreamEvent>,
) -> Result<(), WorkloadError> {
    let path = path.as_ref();
    let io_err = |source| WorkloadError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut out: Box<dyn Write> = if is_gzip(path) {
        Box::new(BufWriter::new(GzEncoder::new(file, Compression::default())))
    } else {
        Box::new(BufWriter::new(file))
    };
    for e in events {
        write!(out, "{},{}", e.feature.0, e.label as u8).map_err(io_err)?;
        for c in &e.context {
            write!(out, ",{c:?}").map_err(io_err)?;
        }
        writeln!(out).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn same_seed_same_stream() {
        let spec = ZipfStreamSpec::new(1000, 1.1, 5000, 7).with_drift(1000, 0.2);
        let a: Vec<_> = spec.generate().unwrap().collect();
        let b: Vec<_> = spec.generate().unwrap().collect();
        assert_eq!(a, b);
        let c: Vec<_> = ZipfStreamSpec { seed: 8, ..spec }.generate().unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn skip_to_matches_iteration() {
        let spec = ZipfStreamSpec::new(500, 1.0, 3000, 1).with_drift(700, 0.5);
        let all: Vec<_> = spec.generate().unwrap().collect();
        let mut s = spec.generate().unwrap();
        s.skip_to(1234);
        assert_eq!(s.position(), 1234);
        let rest: Vec<_> = s.collect();
        assert_eq!(rest, all[1234..]);
    }

    #[test]
    fn features_in_universe() {
        let spec = ZipfStreamSpec::new(50, 0.5, 2000, 3);
        assert!(spec.generate().unwrap().all(|e| e.feature.0 < 50));
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(ZipfStreamSpec::new(0, 1.0, 1, 0).generate().is_err());
        assert!(ZipfStreamSpec::new(10, -1.0, 1, 0).generate().is_err());
        assert!(ZipfStreamSpec::new(10, 1.0, 1, 0).with_drift(0, 0.1).generate().is_err());
        assert!(ZipfStreamSpec::new(10, 1.0, 1, 0).with_drift(5, 1.5).generate().is_err());
    }

    #[test]
    fn noiseless_labels_are_a_function_of_feature() {
        let spec = ZipfStreamSpec::new(200, 1.0, 5000, 11).with_labels(LabelModel { weight_std: 1.0, noise_std: 0.0 });
        let stream = spec.generate().unwrap();
        let weights: Vec<f64> = (0..200).map(|f| stream.planted_weight(FeatureId(f))).collect();
        for e in stream {
            assert_eq!(e.label, weights[e.feature.0 as usize] > 0.0);
        }
    }

    #[test]
    fn full_drift_rerandomizes_mapping() {
        let n = 1000;
        let spec = ZipfStreamSpec::new(n, 1.0, 2, 5).with_drift(1, 1.0);
        let mut s = spec.generate().unwrap();
        let before: Vec<_> = (0..n as usize).map(|r| s.feature_at_rank(r)).collect();
        s.next();
        s.next();
        let after: Vec<_> = (0..n as usize).map(|r| s.feature_at_rank(r)).collect();
        let fixed = before.iter().zip(&after).filter(|(a, b)| a == b).count();
        // a uniform permutation has one fixed point on average
        assert!(fixed < 10, "{fixed} fixed points");
        let set: HashSet<_> = after.iter().collect();
        assert_eq!(set.len(), n as usize);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "1,0\nx,1\n3,1\n").unwrap();
        let err = ingest_trace(&path).unwrap_err();
        assert_eq!(err.line(), Some(2));
        std::fs::write(&path, "1,0\n2,2\n").unwrap();
        assert_eq!(ingest_trace(&path).unwrap_err().line(), Some(2));
        std::fs::write(&path, "1\n").unwrap();
        assert_eq!(ingest_trace(&path).unwrap_err().line(), Some(1));
        assert!(matches!(ingest_trace(dir.path().join("missing.csv")), Err(WorkloadError::Io { .. })));
    }

    #[test]
    fn reads_valid_file_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "5,1\n3,0\n9,1,0.5,-2\n").unwrap();
        let events = ingest_trace(&path).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[0], StreamEvent::new(5, true));
        assert_eq!(events[1], StreamEvent::new(3, false));
        assert_eq!(events[2].context, vec![0.5, -2.0]);
    }

    #[test]
    fn export_ingest_roundtrip_plain_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let events: Vec<_> = ZipfStreamSpec::new(300, 1.1, 1000, 2).generate().unwrap().collect();
        for name in ["t.csv", "t.csv.gz"] {
            let path = dir.path().join(name);
            export_trace(&path, &events).unwrap();
            assert_eq!(ingest_trace(&path).unwrap(), events);
        }
    }
}
