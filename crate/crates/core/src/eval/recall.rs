//! Recall of the sketch's top-k against exact oracles.

use std::collections::HashSet;

use crate::codec::{Decoder, Encoder};
use crate::eval::oracle::ExactTopK;
use crate::eval::EvalError;
use crate::sketch::{FeatureId, HotSketch, SketchConfig};

/// `|sketch top-k ∩ oracle top-k| / k`, where the sketch's top-k are its `k`
/// highest-score slots. When the oracle has seen fewer than `k` distinct
/// features the denominator shrinks to that count.
pub fn recall_at_k(sketch: &HotSketch, oracle: &ExactTopK) -> f64 {
    let truth = oracle.top_set();
    if truth.is_empty() {
        return 1.0;
    }
    let k = oracle.k();
    let hits = sketch.top_k(k).into_iter().filter(|(f, _)| truth.contains(f)).count();
    hits as f64 / k.min(truth.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallPoint {
    pub memory_slots: usize,
    pub slots_per_bucket: usize,
    pub buckets: usize,
    pub recall: f64,
}

/// Feeds `stream` with unit scores into a sketch of `memory_slots / c`
/// buckets by `c` slots and measures recall against `oracle`.
pub fn matched_memory_recall(
    stream: &[FeatureId],
    oracle: &ExactTopK,
    memory_slots: usize,
    slots_per_bucket: usize,
    hash_seed: u64,
) -> Result<RecallPoint, EvalError> {
    let buckets = (memory_slots / slots_per_bucket).max(1);
    let mut sketch = HotSketch::new(SketchConfig::new(buckets).with_slots(slots_per_bucket).with_seed(hash_seed))?;
    for &f in stream {
        sketch.insert(f, 1.0)?;
    }
    Ok(RecallPoint { memory_slots, slots_per_bucket, buckets, recall: recall_at_k(&sketch, oracle) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowRecall {
    pub window: usize,
    /// Stream position at the end of the window.
    pub position: u64,
    /// Against the exact top-k of this window alone.
    pub local_recall: f64,
    /// Against the exact top-k of everything seen so far, decayed on the
    /// sketch's schedule.
    pub cumulative_recall: f64,
    /// First window, measured while the sketch fills from empty.
    pub warm_up: bool,
}

/// Incremental sliding-window recall evaluator over unit-score events.
///
/// The cumulative oracle is multiplied by the sketch's decay coefficient at
/// the same events the sketch decays, so with a coefficient of 1 it is the
/// plain running count.
#[derive(Debug, Clone)]
pub struct SlidingWindowRecall {
    sketch: HotSketch,
    window_events: u64,
    local: ExactTopK,
    cumulative: ExactTopK,
    seen: u64,
    windows: usize,
}

impl SlidingWindowRecall {
    pub fn new(config: SketchConfig, k: usize, window_events: u64) -> Result<Self, EvalError> {
        if window_events == 0 || k == 0 {
            return Err(EvalError::DomainError("window and k must be positive".into()));
        }
        Ok(Self {
            sketch: HotSketch::new(config)?,
            window_events,
            local: ExactTopK::new(k),
            cumulative: ExactTopK::new(k),
            seen: 0,
            windows: 0,
        })
    }

    pub fn sketch(&self) -> &HotSketch {
        &self.sketch
    }

    pub fn position(&self) -> u64 {
        self.seen
    }

    /// Consumes one event; returns the window's recall when it closes.
    pub fn observe(&mut self, feature: FeatureId) -> Result<Option<WindowRecall>, EvalError> {
        self.sketch.insert(feature, 1.0)?;
        self.local.add(feature, 1.0);
        self.cumulative.add(feature, 1.0);
        self.seen += 1;
        let interval = self.sketch.config().decay_interval;
        if interval > 0 && self.seen % interval == 0 {
            self.cumulative.scale(self.sketch.config().decay_coefficient);
        }
        if self.seen % self.window_events != 0 {
            return Ok(None);
        }
        let report = WindowRecall {
            window: self.windows,
            position: self.seen,
            local_recall: recall_at_k(&self.sketch, &self.local),
            cumulative_recall: recall_at_k(&self.sketch, &self.cumulative),
            warm_up: self.windows == 0,
        };
        self.windows += 1;
        self.local.clear();
        Ok(Some(report))
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.block(&self.sketch.snapshot()).u64(self.window_events).u64(self.seen).usize(self.windows);
        self.local.encode(enc);
        self.cumulative.encode(enc);
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, EvalError> {
        let corrupt = |_| EvalError::CorruptState("truncated window evaluator".into());
        let sketch = HotSketch::restore(dec.block().map_err(corrupt)?)?;
        let window_events = dec.u64().map_err(corrupt)?;
        let seen = dec.u64().map_err(corrupt)?;
        let windows = dec.usize().map_err(corrupt)?;
        if window_events == 0 {
            return Err(EvalError::CorruptState("zero window".into()));
        }
        let local = ExactTopK::decode(dec)?;
        let cumulative = ExactTopK::decode(dec)?;
        Ok(Self { sketch, window_events, local, cumulative, seen, windows })
    }
}

/// Overlap of two top-k sets, `|a ∩ b| / k`.
pub fn overlap(a: &HashSet<FeatureId>, b: &HashSet<FeatureId>, k: usize) -> f64 {
    a.intersection(b).count() as f64 / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_covering_universe_gives_full_recall() {
        let stream: Vec<FeatureId> = (0..5000u64).map(|i| FeatureId((i * i) % 97)).collect();
        let mut oracle = ExactTopK::new(10);
        for &f in &stream {
            oracle.add(f, 1.0);
        }
        let p = matched_memory_recall(&stream, &oracle, 97 * 16, 16, 3).unwrap();
        assert_eq!(p.recall, 1.0);
    }

    #[test]
    fn empty_oracle_is_vacuous() {
        let sketch = HotSketch::new(SketchConfig::new(4)).unwrap();
        assert_eq!(recall_at_k(&sketch, &ExactTopK::new(5)), 1.0);
    }

    #[test]
    fn first_window_flagged_as_warm_up() {
        let mut eval = SlidingWindowRecall::new(SketchConfig::new(64), 5, 100).unwrap();
        let mut reports = Vec::new();
        for i in 0..300u64 {
            if let Some(r) = eval.observe(FeatureId(i % 20)).unwrap() {
                reports.push(r);
            }
        }
        assert_eq!(reports.len(), 3);
        assert!(reports[0].warm_up);
        assert!(!reports[1].warm_up && !reports[2].warm_up);
        assert_eq!(reports[2].position, 300);
    }

    #[test]
    fn encode_decode_resumes_identically() {
        let config = SketchConfig::new(8).with_decay(0.9, 37);
        let stream: Vec<FeatureId> = (0..1000u64).map(|i| FeatureId(crate::hash::mix64(i) % 50)).collect();
        let mut straight = SlidingWindowRecall::new(config.clone(), 5, 100).unwrap();
        let a: Vec<_> = stream.iter().filter_map(|&f| straight.observe(f).unwrap()).collect();

        let mut first = SlidingWindowRecall::new(config, 5, 100).unwrap();
        let mut b: Vec<_> = stream[..430].iter().filter_map(|&f| first.observe(f).unwrap()).collect();
        let mut enc = Encoder::new();
        first.encode(&mut enc);
        let bytes = enc.finish();
        let mut resumed = SlidingWindowRecall::decode(&mut Decoder::new(&bytes)).unwrap();
        b.extend(stream[430..].iter().filter_map(|&f| resumed.observe(f).unwrap()));
        assert_eq!(a, b);
    }
}
