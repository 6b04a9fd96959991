//! Exact reference structures.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::codec::{Decoder, Encoder};
use crate::eval::EvalError;
use crate::sketch::FeatureId;

/// Exact per-feature score accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTopK {
    k: usize,
    scores: HashMap<FeatureId, f64>,
}

impl ExactTopK {
    pub fn new(k: usize) -> Self {
        assert!(k > 0, "k must be positive");
        Self { k, scores: HashMap::new() }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn add(&mut self, feature: FeatureId, score: f64) {
        *self.scores.entry(feature).or_insert(0.0) += score;
    }

    /// Multiplies every accumulated score, mirroring sketch decay.
    pub fn scale(&mut self, factor: f64) {
        self.scores.values_mut().for_each(|s| *s *= factor);
    }

    pub fn clear(&mut self) {
        self.scores.clear();
    }

    pub fn score(&self, feature: FeatureId) -> f64 {
        self.scores.get(&feature).copied().unwrap_or(0.0)
    }

    pub fn distinct(&self) -> usize {
        self.scores.len()
    }

    pub fn total(&self) -> f64 {
        let mut v: Vec<_> = self.scores.iter().collect();
        v.sort_by_key(|(f, _)| **f);
        v.into_iter().map(|(_, s)| s).sum()
    }

    /// All features ranked by score descending, ties by feature id.
    pub fn ranked(&self) -> Vec<(FeatureId, f64)> {
        let mut all: Vec<_> = self.scores.iter().map(|(&f, &s)| (f, s)).collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all
    }

    pub fn top_k(&self) -> Vec<(FeatureId, f64)> {
        let mut all = self.ranked();
        all.truncate(self.k);
        all
    }

    pub fn top_set(&self) -> HashSet<FeatureId> {
        self.top_k().into_iter().map(|(f, _)| f).collect()
    }

    pub fn encode(&self, enc: &mut Encoder) {
        let mut entries: Vec<_> = self.scores.iter().collect();
        entries.sort_by_key(|(f, _)| **f);
        enc.usize(self.k).usize(entries.len());
        for (f, s) in entries {
            enc.u64(f.0).f64(*s);
        }
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, EvalError> {
        let corrupt = |_| EvalError::CorruptState("truncated oracle".into());
        let k = dec.usize().map_err(corrupt)?;
        let len = dec.usize().map_err(corrupt)?;
        dec.check_len(len, 16).map_err(corrupt)?;
        if k == 0 {
            return Err(EvalError::CorruptState("k = 0".into()));
        }
        let mut scores = HashMap::with_capacity(len);
        for _ in 0..len {
            let f = FeatureId(dec.u64().map_err(corrupt)?);
            scores.insert(f, dec.f64().map_err(corrupt)?);
        }
        Ok(Self { k, scores })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct MinKey {
    // non-negative finite f64 bit patterns order like the values
    score_bits: u64,
    position: usize,
}

/// Textbook SpaceSaving over a single summary, with an ordered index for
/// exact minimum replacement. Minimum ties go to the lowest position, where
/// positions are assigned in first-insertion order and inherited on
/// replacement.
#[derive(Debug, Clone)]
pub struct SpaceSaving {
    capacity: usize,
    entries: Vec<(FeatureId, f64)>,
    index: HashMap<FeatureId, usize>,
    order: BTreeSet<MinKey>,
}

impl SpaceSaving {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self { capacity, entries: Vec::with_capacity(capacity), index: HashMap::new(), order: BTreeSet::new() }
    }

    fn key(&self, position: usize) -> MinKey {
        MinKey { score_bits: self.entries[position].1.to_bits(), position }
    }

    /// Adds `score` (finite, non-negative) for `feature`; returns the evicted
    /// feature, if any.
    pub fn insert(&mut self, feature: FeatureId, score: f64) -> Option<FeatureId> {
        assert!(score.is_finite() && score >= 0.0);
        if let Some(&pos) = self.index.get(&feature) {
            self.order.remove(&self.key(pos));
            self.entries[pos].1 += score;
            self.order.insert(self.key(pos));
            return None;
        }
        if self.entries.len() < self.capacity {
            self.entries.push((feature, score));
            let pos = self.entries.len() - 1;
            self.index.insert(feature, pos);
            self.order.insert(self.key(pos));
            return None;
        }
        let min = self.order.pop_first().expect("full summary has a minimum");
        let (victim, min_score) = self.entries[min.position];
        self.index.remove(&victim);
        self.entries[min.position] = (feature, min_score + score);
        self.index.insert(feature, min.position);
        self.order.insert(self.key(min.position));
        Some(victim)
    }

    pub fn estimate(&self, feature: FeatureId) -> Option<f64> {
        self.index.get(&feature).map(|&p| self.entries[p].1)
    }

    /// Tracked `(feature, score)` pairs in position order.
    pub fn tracked(&self) -> &[(FeatureId, f64)] {
        &self.entries
    }
}

/// Runs a reference SpaceSaving of `capacity` over `stream` and returns the
/// tracked set.
pub fn reference_spacesaving(stream: impl IntoIterator<Item = (FeatureId, f64)>, capacity: usize) -> SpaceSaving {
    let mut ss = SpaceSaving::new(capacity);
    for (f, s) in stream {
        ss.insert(f, s);
    }
    ss
}
