use std::collections::HashMap;

use hotsketch::eval::reference_spacesaving;
use hotsketch::{FeatureClass, FeatureId, HotSketch, SketchConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn events(universe: u64, max_len: usize) -> impl Strategy<Value = Vec<(u64, f64)>> {
    prop::collection::vec((0..universe, 0.0f64..10.0), 0..max_len)
}

fn feed(config: SketchConfig, stream: &[(u64, f64)]) -> HotSketch {
    let mut sketch = HotSketch::new(config).unwrap();
    for &(f, s) in stream {
        sketch.insert(FeatureId(f), s).unwrap();
    }
    sketch
}

fn small_config(w: usize, c: usize, seed: u64) -> SketchConfig {
    SketchConfig::new(w).with_slots(c).with_seed(seed).with_thresholds(20.0, 5.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn total_score_equals_inserted_mass(w in 1usize..16, c in 1usize..8, seed: u64, stream in events(300, 400)) {
        let sketch = feed(small_config(w, c, seed), &stream);
        let inserted: f64 = stream.iter().map(|e| e.1).sum();
        prop_assert!((sketch.total_score() - inserted).abs() <= 1e-9 * inserted.max(1.0));
    }

    #[test]
    fn every_feature_sits_once_in_its_own_bucket(w in 1usize..16, c in 1usize..8, seed: u64, stream in events(300, 400)) {
        let sketch = feed(small_config(w, c, seed), &stream);
        let mut seen = HashMap::new();
        for b in 0..w {
            for slot in sketch.bucket(b).iter().filter(|s| !s.is_empty()) {
                prop_assert_eq!(sketch.bucket_of(slot.feature), b);
                prop_assert!(seen.insert(slot.feature, b).is_none(), "{} tracked twice", slot.feature);
            }
        }
    }

    #[test]
    fn tracked_scores_never_underestimate(w in 1usize..16, c in 1usize..8, seed: u64, stream in events(300, 400)) {
        let sketch = feed(small_config(w, c, seed), &stream);
        let mut exact: HashMap<u64, f64> = HashMap::new();
        for &(f, s) in &stream {
            *exact.entry(f).or_default() += s;
        }
        for slot in sketch.tracked() {
            let truth = exact[&slot.feature.0];
            prop_assert!(slot.score >= truth - 1e-9 * truth.max(1.0), "{} < {truth}", slot.score);
        }
    }

    #[test]
    fn decay_never_raises_a_score_or_class(
        w in 1usize..16,
        c in 1usize..8,
        seed: u64,
        coefficient in 0.01f64..=1.0,
        stream in events(100, 300),
    ) {
        let mut sketch = feed(small_config(w, c, seed), &stream);
        let before: Vec<_> = sketch.slots().to_vec();
        sketch.decay();
        for (old, new) in before.iter().zip(sketch.slots()) {
            prop_assert_eq!(old.feature, new.feature);
            prop_assert!(new.score <= old.score);
            prop_assert!(sketch.classify(new.score) <= sketch.classify(old.score));
        }
        // an explicit coefficient, through a second sketch
        let mut scaled = feed(small_config(w, c, seed).with_decay(coefficient, 0), &stream);
        let before = scaled.slots().to_vec();
        scaled.decay();
        for (old, new) in before.iter().zip(scaled.slots()) {
            prop_assert!(new.score <= old.score);
            prop_assert!(scaled.classify(new.score) <= scaled.classify(old.score));
        }
    }

    #[test]
    fn same_seed_same_sketch(w in 1usize..16, c in 1usize..8, seed: u64, stream in events(300, 300)) {
        let a = feed(small_config(w, c, seed), &stream);
        let b = feed(small_config(w, c, seed), &stream);
        prop_assert_eq!(a.snapshot(), b.snapshot());
    }

    #[test]
    fn power_of_two_scaling_keeps_layout(
        w in 1usize..16,
        c in 1usize..8,
        seed: u64,
        shift in -3i32..4,
        stream in events(200, 300),
    ) {
        let lambda = 2f64.powi(shift);
        let base = feed(small_config(w, c, seed), &stream);
        let scaled_stream: Vec<_> = stream.iter().map(|&(f, s)| (f, s * lambda)).collect();
        let scaled = feed(small_config(w, c, seed), &scaled_stream);
        for (a, b) in base.slots().iter().zip(scaled.slots()) {
            prop_assert_eq!(a.feature, b.feature);
            prop_assert_eq!(a.score * lambda, b.score);
        }
    }

    #[test]
    fn single_bucket_matches_spacesaving(c in 1usize..24, stream in events(60, 400)) {
        let sketch = feed(SketchConfig::new(1).with_slots(c), &stream);
        let reference = reference_spacesaving(stream.iter().map(|&(f, s)| (FeatureId(f), s)), c);
        let ours: Vec<(FeatureId, f64)> = sketch.tracked().map(|s| (s.feature, s.score)).collect();
        prop_assert_eq!(ours.as_slice(), reference.tracked());
    }
}

#[test]
fn unit_scores_are_exact_when_no_bucket_overflows() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let distinct = 2_000u64;
    let config = SketchConfig::new(500).with_slots(16).with_seed(3);
    let mut sketch = HotSketch::new(config).unwrap();
    let mut load = vec![0usize; 500];
    for f in 0..distinct {
        load[sketch.bucket_of(FeatureId(f))] += 1;
    }
    assert!(load.iter().all(|&l| l <= 16), "pick a seed without overflow");
    let mut exact = vec![0u64; distinct as usize];
    for _ in 0..200_000 {
        let f = rng.random_range(0..distinct);
        exact[f as usize] += 1;
        sketch.insert(FeatureId(f), 1.0).unwrap();
    }
    for (f, &count) in exact.iter().enumerate() {
        assert_eq!(sketch.query(FeatureId(f as u64)).score, count as f64);
    }
}

#[test]
fn snapshot_midway_through_a_long_stream_replays_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let stream: Vec<(u64, f64)> =
        (0..200_000).map(|_| (rng.random_range(0..50_000u64), rng.random_range(0.0..3.0))).collect();
    let config = SketchConfig::new(1024).with_slots(4).with_seed(9).with_decay(0.9, 7_000);
    let mut full = HotSketch::new(config.clone()).unwrap();
    for &(f, s) in &stream {
        full.insert(FeatureId(f), s).unwrap();
    }
    let mut first = HotSketch::new(config).unwrap();
    for &(f, s) in &stream[..100_000] {
        first.insert(FeatureId(f), s).unwrap();
    }
    let mut resumed = HotSketch::restore(&first.snapshot()).unwrap();
    for &(f, s) in &stream[100_000..] {
        resumed.insert(FeatureId(f), s).unwrap();
    }
    assert_eq!(resumed.snapshot(), full.snapshot());
}

#[test]
fn inclusive_thresholds_at_exact_boundaries() {
    let sketch = HotSketch::new(SketchConfig::new(4).with_thresholds(10.0, 2.0)).unwrap();
    assert_eq!(sketch.classify(10.0), FeatureClass::Hot);
    assert_eq!(sketch.classify(2.0), FeatureClass::Medium);
    assert_eq!(sketch.classify(1.999), FeatureClass::Cold);
}
