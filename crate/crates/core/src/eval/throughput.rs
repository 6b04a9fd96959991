//! Serialized insert/query throughput probe.

use std::hint::black_box;
use std::time::Instant;

use crate::eval::EvalError;
use crate::sketch::{FeatureId, HotSketch, SketchConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputSample {
    pub buckets: usize,
    pub slots_per_bucket: usize,
    pub ops: usize,
    pub insert_ops_per_sec: f64,
    pub query_ops_per_sec: f64,
}

/// Times serialized inserts of `features` (unit scores) followed by queries
/// of the same features, after one warm-up pass. Returns `None` for an
/// empty workload.
pub fn throughput_bench(config: SketchConfig, features: &[FeatureId]) -> Result<Option<ThroughputSample>, EvalError> {
    if features.is_empty() {
        return Ok(None);
    }
    let mut sketch = HotSketch::new(config)?;
    for &f in features {
        sketch.insert(f, 1.0)?;
    }

    let start = Instant::now();
    for &f in features {
        black_box(sketch.insert(black_box(f), 1.0)?);
    }
    let insert_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut acc = 0.0;
    for &f in features {
        acc += sketch.query(black_box(f)).score;
    }
    black_box(acc);
    let query_secs = start.elapsed().as_secs_f64();

    let ops = features.len();
    let rate = |secs: f64| ops as f64 / secs.max(f64::MIN_POSITIVE);
    Ok(Some(ThroughputSample {
        buckets: sketch.config().buckets,
        slots_per_bucket: sketch.config().slots_per_bucket,
        ops,
        insert_ops_per_sec: rate(insert_secs),
        query_ops_per_sec: rate(query_secs),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_ops_emit_nothing() {
        assert_eq!(throughput_bench(SketchConfig::new(4), &[]).unwrap(), None);
    }

    #[test]
    fn reports_positive_rates() {
        let features: Vec<_> = (0..10_000u64).map(|i| FeatureId(i % 777)).collect();
        let s = throughput_bench(SketchConfig::new(64), &features).unwrap().unwrap();
        assert_eq!(s.ops, 10_000);
        assert!(s.insert_ops_per_sec > 0.0 && s.query_ops_per_sec > 0.0);
    }
}
