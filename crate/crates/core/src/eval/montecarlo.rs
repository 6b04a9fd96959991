//! Monte-Carlo estimate of how often a planted heavy feature survives in the
//! sketch.
//!
//! Each trial builds a fresh stream of unit-score events: the planted feature
//! takes just over a `γ` share of the events and the remainder is spread
//! uniformly over `others` distinct features, then the stream is shuffled and
//! fed to a sketch with a fresh hash seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::eval::EvalError;
use crate::hash;
use crate::sketch::{FeatureId, HotSketch, SketchConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetentionTrial {
    pub gamma: f64,
    pub buckets: usize,
    pub slots_per_bucket: usize,
    pub stream_len: usize,
    /// Distinct background features.
    pub others: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetentionEstimate {
    pub trials: usize,
    pub retained: usize,
    pub frequency: f64,
}

impl RetentionEstimate {
    /// Binomial standard error at success probability `p`.
    pub fn std_error_at(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

const PLANTED: FeatureId = FeatureId(0);

fn run_trial(spec: &RetentionTrial, seed: u64) -> Result<bool, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hot = ((spec.gamma * spec.stream_len as f64).floor() as usize + 1).min(spec.stream_len);
    let mut stream: Vec<FeatureId> = Vec::with_capacity(spec.stream_len);
    stream.resize(hot, PLANTED);
    stream.extend((hot..spec.stream_len).map(|_| FeatureId(rng.random_range(1..=spec.others))));
    stream.shuffle(&mut rng);
    let config = SketchConfig::new(spec.buckets).with_slots(spec.slots_per_bucket).with_seed(rng.random());
    let mut sketch = HotSketch::new(config)?;
    for f in stream {
        sketch.insert(f, 1.0)?;
    }
    Ok(sketch.query(PLANTED).score > 0.0)
}

/// Runs `trials` independent trials in parallel; results are reduced in
/// trial order so the estimate is independent of the thread count.
pub fn retention_frequency(spec: &RetentionTrial, trials: usize, seed: u64) -> Result<RetentionEstimate, EvalError> {
    if !(spec.gamma > 0.0 && spec.gamma < 1.0) {
        return Err(EvalError::DomainError(format!("gamma = {}", spec.gamma)));
    }
    if trials == 0 || spec.stream_len == 0 || spec.others == 0 {
        return Err(EvalError::DomainError("trials, stream_len and others must be positive".into()));
    }
    let outcomes: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(spec, hash::derive_seed(seed, t as u64)))
        .collect::<Result<_, _>>()?;
    let retained = outcomes.iter().filter(|&&kept| kept).count();
    Ok(RetentionEstimate { trials, retained, frequency: retained as f64 / trials as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominant_feature_always_kept_with_ample_slots() {
        let spec = RetentionTrial { gamma: 0.5, buckets: 10, slots_per_bucket: 4, stream_len: 500, others: 50 };
        let est = retention_frequency(&spec, 50, 1).unwrap();
        assert_eq!(est.retained, 50);
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = RetentionTrial { gamma: 0.01, buckets: 2, slots_per_bucket: 2, stream_len: 400, others: 1000 };
        let a = retention_frequency(&spec, 64, 9).unwrap();
        let b = retention_frequency(&spec, 64, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_parameters() {
        let spec = RetentionTrial { gamma: 0.0, buckets: 1, slots_per_bucket: 2, stream_len: 10, others: 5 };
        assert!(retention_frequency(&spec, 10, 0).is_err());
        let spec = RetentionTrial { gamma: 0.3, ..spec };
        assert!(retention_frequency(&spec, 0, 0).is_err());
    }
}
