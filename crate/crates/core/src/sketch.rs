//! HotSketch: a bucketized, hash-table-free SpaceSaving variant.
//!
//! The sketch is an array of `w` buckets of `c` slots. Each feature hashes to
//! exactly one bucket. A slot records the feature, its accumulated importance
//! score and, for hot features, the row of its unique embedding.
//!
//! Insertion has three cases:
//!
//! 1. the feature is already in its bucket: add the delta to its score;
//! 2. the bucket has an empty slot: place `(feature, delta)` there;
//! 3. the bucket is full: the slot with the smallest score `(f_min, s_min)`
//!    becomes `(feature, s_min + delta)` and `f_min` is reported as evicted.
//!
//! Ties on the minimum go to the lowest slot index. Slots fill left to right
//! and are never emptied again.
//!
//! The sketch takes `&mut self` for every mutation and holds no interior
//! mutability, so callers serialize writers and may share `&HotSketch`
//! between concurrent readers.

use std::fmt;

use thiserror::Error;

use crate::codec::{Decoder, Encoder, Truncated};
use crate::hash;

/// Opaque categorical feature identifier, global across fields.
///
/// `u64::MAX` is reserved as the empty-slot marker and is rejected as input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureId(pub u64);

impl FeatureId {
    pub const EMPTY: FeatureId = FeatureId(u64::MAX);

    #[inline]
    pub fn is_empty(self) -> bool {
        self == Self::EMPTY
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for FeatureId {
    fn from(v: u64) -> Self {
        FeatureId(v)
    }
}

/// Row index into the unique (hot) embedding table.
pub type RowHandle = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SketchError {
    #[error("invalid sketch configuration: {0}")]
    InvalidConfig(String),
    #[error("score delta must be finite and non-negative, got {0}")]
    InvalidScore(f64),
    #[error("feature id {0} is reserved")]
    ReservedFeature(u64),
    #[error("feature {0} is not tracked by the sketch")]
    FeatureNotTracked(FeatureId),
    #[error("unsupported sketch state layout")]
    VersionMismatch,
    #[error("corrupt sketch state: {0}")]
    CorruptState(String),
}

impl From<Truncated> for SketchError {
    fn from(_: Truncated) -> Self {
        SketchError::CorruptState("truncated".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchConfig {
    /// Number of buckets `w`.
    pub buckets: usize,
    /// Slots per bucket `c`.
    pub slots_per_bucket: usize,
    pub hot_threshold: f64,
    pub medium_threshold: f64,
    /// Multiplier in `(0, 1]` applied to every score on decay.
    pub decay_coefficient: f64,
    /// Inserts between automatic decay passes. `0` disables automatic decay;
    /// [`HotSketch::decay`] can still be called explicitly.
    pub decay_interval: u64,
    pub hash_seed: u64,
}

impl SketchConfig {
    pub const DEFAULT_SLOTS: usize = 4;

    /// `buckets` buckets of four slots, no thresholds, no decay.
    pub fn new(buckets: usize) -> Self {
        Self {
            buckets,
            slots_per_bucket: Self::DEFAULT_SLOTS,
            hot_threshold: f64::INFINITY,
            medium_threshold: f64::INFINITY,
            decay_coefficient: 1.0,
            decay_interval: 0,
            hash_seed: 0,
        }
    }

    pub fn with_slots(mut self, slots_per_bucket: usize) -> Self {
        self.slots_per_bucket = slots_per_bucket;
        self
    }

    pub fn with_thresholds(mut self, hot: f64, medium: f64) -> Self {
        self.hot_threshold = hot;
        self.medium_threshold = medium;
        self
    }

    pub fn with_decay(mut self, coefficient: f64, interval: u64) -> Self {
        self.decay_coefficient = coefficient;
        self.decay_interval = interval;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.hash_seed = seed;
        self
    }

    pub fn capacity(&self) -> usize {
        self.buckets * self.slots_per_bucket
    }

    pub fn validate(&self) -> Result<(), SketchError> {
        let bad = |msg: &str| Err(SketchError::InvalidConfig(msg.to_string()));
        if self.buckets == 0 || self.slots_per_bucket == 0 {
            return bad("bucket count and slots per bucket must be positive");
        }
        if self.buckets.checked_mul(self.slots_per_bucket).is_none() {
            return bad("slot capacity overflows");
        }
        if self.hot_threshold.is_nan() || self.medium_threshold.is_nan() {
            return bad("thresholds must not be NaN");
        }
        if self.hot_threshold < 0.0 || self.medium_threshold < 0.0 {
            return bad("thresholds must be non-negative");
        }
        if self.medium_threshold > self.hot_threshold {
            return bad("medium threshold exceeds hot threshold");
        }
        if !(self.decay_coefficient > 0.0 && self.decay_coefficient <= 1.0) {
            return bad("decay coefficient must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slot {
    pub feature: FeatureId,
    pub score: f64,
    pub handle: Option<RowHandle>,
}

impl Slot {
    pub const EMPTY: Slot = Slot { feature: FeatureId::EMPTY, score: 0.0, handle: None };

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.feature.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotOutcome {
    Matched,
    FilledEmpty,
    /// The minimum-score slot was taken over. `released` carries the victim's
    /// unique-row handle, which the embedding store must reclaim.
    Evicted { victim: FeatureId, released: Option<RowHandle> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureClass {
    Cold,
    Medium,
    Hot,
}

impl fmt::Display for FeatureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureClass::Cold => "cold",
            FeatureClass::Medium => "medium",
            FeatureClass::Hot => "hot",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryResult {
    pub class: FeatureClass,
    pub score: f64,
    pub handle: Option<RowHandle>,
}

impl QueryResult {
    /// Class used for embedding lookup: a hot feature still waiting for its
    /// unique row keeps the pooled medium lookup.
    pub fn lookup_class(&self) -> FeatureClass {
        match (self.class, self.handle) {
            (_, Some(_)) => FeatureClass::Hot,
            (FeatureClass::Hot, None) => FeatureClass::Medium,
            (class, None) => class,
        }
    }
}

/// Location of a slot, `bucket * c + index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SlotPos(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct HotSketch {
    config: SketchConfig,
    slots: Vec<Slot>,
    events_since_decay: u64,
    /// Hot features pushed below the hot threshold by automatic decay that
    /// still hold a unique row.
    pending_demotions: Vec<FeatureId>,
}

const MAGIC: &[u8; 4] = b"HSK1";

impl HotSketch {
    pub fn new(config: SketchConfig) -> Result<Self, SketchError> {
        config.validate()?;
        Ok(Self {
            slots: vec![Slot::EMPTY; config.capacity()],
            config,
            events_since_decay: 0,
            pending_demotions: Vec::new(),
        })
    }

    pub fn config(&self) -> &SketchConfig {
        &self.config
    }

    pub fn events_since_decay(&self) -> u64 {
        self.events_since_decay
    }

    #[inline]
    pub fn bucket_of(&self, feature: FeatureId) -> usize {
        hash::reduce(hash::seeded(feature.0, self.config.hash_seed), self.config.buckets)
    }

    #[inline]
    fn bucket_range(&self, bucket: usize) -> std::ops::Range<usize> {
        let c = self.config.slots_per_bucket;
        bucket * c..(bucket + 1) * c
    }

    fn position(&self, feature: FeatureId) -> Option<usize> {
        let range = self.bucket_range(self.bucket_of(feature));
        let start = range.start;
        self.slots[range].iter().position(|s| s.feature == feature).map(|i| start + i)
    }

    fn check_input(feature: FeatureId, delta: f64) -> Result<(), SketchError> {
        if feature.is_empty() {
            return Err(SketchError::ReservedFeature(feature.0));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(SketchError::InvalidScore(delta));
        }
        Ok(())
    }

    pub fn insert(&mut self, feature: FeatureId, delta: f64) -> Result<SlotOutcome, SketchError> {
        Self::check_input(feature, delta)?;
        let range = self.bucket_range(self.bucket_of(feature));
        let bucket = &mut self.slots[range];

        let mut empty = None;
        let mut min_idx = 0;
        let mut min_score = f64::INFINITY;
        let mut matched = None;
        for (i, slot) in bucket.iter().enumerate() {
            if slot.feature == feature {
                matched = Some(i);
                break;
            }
            if slot.is_empty() {
                empty.get_or_insert(i);
            } else if slot.score < min_score {
                min_score = slot.score;
                min_idx = i;
            }
        }

        let outcome = if let Some(i) = matched {
            bucket[i].score += delta;
            SlotOutcome::Matched
        } else if let Some(i) = empty {
            bucket[i] = Slot { feature, score: delta, handle: None };
            SlotOutcome::FilledEmpty
        } else {
            let slot = &mut bucket[min_idx];
            let victim = slot.feature;
            let released = slot.handle.take();
            slot.feature = feature;
            slot.score += delta;
            self.pending_demotions.retain(|&f| f != victim);
            SlotOutcome::Evicted { victim, released }
        };

        self.events_since_decay += 1;
        if self.config.decay_interval > 0 && self.events_since_decay >= self.config.decay_interval {
            let demoted = self.decay();
            self.pending_demotions.extend(demoted);
        }
        Ok(outcome)
    }

    pub fn classify(&self, score: f64) -> FeatureClass {
        if score >= self.config.hot_threshold {
            FeatureClass::Hot
        } else if score >= self.config.medium_threshold {
            FeatureClass::Medium
        } else {
            FeatureClass::Cold
        }
    }

    pub fn query(&self, feature: FeatureId) -> QueryResult {
        match self.position(feature) {
            Some(pos) => {
                let slot = &self.slots[pos];
                QueryResult { class: self.classify(slot.score), score: slot.score, handle: slot.handle }
            }
            None => QueryResult { class: FeatureClass::Cold, score: 0.0, handle: None },
        }
    }

    /// Multiplies every score by the decay coefficient and resets the decay
    /// counter. Returns the features that still hold a unique row but are no
    /// longer hot; the caller migrates them.
    pub fn decay(&mut self) -> Vec<FeatureId> {
        self.events_since_decay = 0;
        let coefficient = self.config.decay_coefficient;
        let hot = self.config.hot_threshold;
        let mut demoted = Vec::new();
        for slot in self.slots.iter_mut().filter(|s| !s.is_empty()) {
            slot.score *= coefficient;
            if slot.handle.is_some() && slot.score < hot {
                demoted.push(slot.feature);
            }
        }
        demoted
    }

    /// Demotion candidates produced by automatic decay since the last call.
    pub fn take_pending_demotions(&mut self) -> Vec<FeatureId> {
        std::mem::take(&mut self.pending_demotions)
    }

    pub fn set_handle(&mut self, feature: FeatureId, handle: RowHandle) -> Result<(), SketchError> {
        let pos = self.position(feature).ok_or(SketchError::FeatureNotTracked(feature))?;
        self.slots[pos].handle = Some(handle);
        Ok(())
    }

    /// Clears and returns the feature's handle.
    pub fn clear_handle(&mut self, feature: FeatureId) -> Result<Option<RowHandle>, SketchError> {
        let pos = self.position(feature).ok_or(SketchError::FeatureNotTracked(feature))?;
        Ok(self.slots[pos].handle.take())
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn bucket(&self, bucket: usize) -> &[Slot] {
        &self.slots[self.bucket_range(bucket)]
    }

    pub fn tracked(&self) -> impl Iterator<Item = &Slot> + '_ {
        self.slots.iter().filter(|s| !s.is_empty())
    }

    pub fn len(&self) -> usize {
        self.tracked().count()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Slot::is_empty)
    }

    pub fn total_score(&self) -> f64 {
        self.tracked().map(|s| s.score).sum()
    }

    pub fn live_handles(&self) -> usize {
        self.slots.iter().filter(|s| s.handle.is_some()).count()
    }

    /// The `k` highest-score tracked features, score descending, ties by
    /// feature id.
    pub fn top_k(&self, k: usize) -> Vec<(FeatureId, f64)> {
        let mut all: Vec<(FeatureId, f64)> = self.tracked().map(|s| (s.feature, s.score)).collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    /// Hot features without a unique row, highest score first, ties by slot
    /// position.
    pub fn promotion_candidates(&self) -> Vec<(FeatureId, f64)> {
        let mut out: Vec<(usize, FeatureId, f64)> = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty() && s.handle.is_none() && s.score >= self.config.hot_threshold)
            .map(|(i, s)| (i, s.feature, s.score))
            .collect();
        out.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        out.into_iter().map(|(_, f, s)| (f, s)).collect()
    }

    /// Serialized sketch state.
    ///
    /// Layout (little-endian): `"HSK1"`, then `w u64, c u64, hot f64,
    /// medium f64, decay_coefficient f64, decay_interval u64, hash_seed u64`,
    /// then `events_since_decay u64`, then `w * c` slots row-major as
    /// `(feature u64, score f64, handle i64)` with `-1` for no handle, then a
    /// `u64` count of pending demotions followed by their feature ids.
    pub fn snapshot(&self) -> Vec<u8> {
        let c = &self.config;
        let mut enc = Encoder::with_magic(MAGIC);
        enc.usize(c.buckets)
            .usize(c.slots_per_bucket)
            .f64(c.hot_threshold)
            .f64(c.medium_threshold)
            .f64(c.decay_coefficient)
            .u64(c.decay_interval)
            .u64(c.hash_seed)
            .u64(self.events_since_decay);
        for slot in &self.slots {
            enc.u64(slot.feature.0).f64(slot.score).i64(slot.handle.map_or(-1, i64::from));
        }
        enc.usize(self.pending_demotions.len());
        for f in &self.pending_demotions {
            enc.u64(f.0);
        }
        enc.finish()
    }

    pub fn restore(bytes: &[u8]) -> Result<Self, SketchError> {
        let mut dec = Decoder::new(bytes);
        if !dec.magic(MAGIC).map_err(|_| SketchError::VersionMismatch)? {
            return Err(SketchError::VersionMismatch);
        }
        let config = SketchConfig {
            buckets: dec.usize()?,
            slots_per_bucket: dec.usize()?,
            hot_threshold: dec.f64()?,
            medium_threshold: dec.f64()?,
            decay_coefficient: dec.f64()?,
            decay_interval: dec.u64()?,
            hash_seed: dec.u64()?,
        };
        config.validate().map_err(|e| SketchError::CorruptState(e.to_string()))?;
        let events_since_decay = dec.u64()?;
        let capacity = config.capacity();
        dec.check_len(capacity, 24)?;
        let mut slots = Vec::with_capacity(capacity);
        for _ in 0..capacity {
            let feature = FeatureId(dec.u64()?);
            let score = dec.f64()?;
            let raw_handle = dec.i64()?;
            let handle = match raw_handle {
                -1 => None,
                h => Some(RowHandle::try_from(h).map_err(|_| SketchError::CorruptState(format!("handle {h}")))?),
            };
            if feature.is_empty() && (score != 0.0 || handle.is_some()) {
                return Err(SketchError::CorruptState("empty slot carries data".into()));
            }
            if !(score.is_finite() && score >= 0.0) {
                return Err(SketchError::CorruptState(format!("score {score}")));
            }
            slots.push(Slot { feature, score, handle });
        }
        let pending = dec.usize()?;
        dec.check_len(pending, 8)?;
        let pending_demotions = (0..pending).map(|_| dec.u64().map(FeatureId)).collect::<Result<_, _>>()?;
        if !dec.is_empty() {
            return Err(SketchError::CorruptState("trailing bytes".into()));
        }
        let sketch = Self { config, slots, events_since_decay, pending_demotions };
        for (pos, slot) in sketch.slots.iter().enumerate().filter(|(_, s)| !s.is_empty()) {
            if sketch.position(slot.feature) != Some(pos) {
                return Err(SketchError::CorruptState(format!("feature {} misplaced", slot.feature)));
            }
        }
        Ok(sketch)
    }
}
