use hotsketch::eval::ExactTopK;
use hotsketch::importance::{score_from_frequency, score_from_gradient, ImportanceMode};
use hotsketch::trainer::{ModelSpec, TrainConfig, TrainMode, Trainer};
use hotsketch::workload::LabelModel;
use hotsketch::{FeatureId, StreamEvent, ZipfStreamSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-5 * analytic.abs().max(numeric.abs()) + 1e-9
}

/// Warms a small tiered model up so the batch mixes hot, medium and cold
/// features, then compares every touched row and predictor parameter with
/// central differences.
fn gradient_instance(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(2..6);
    let mut spec = ModelSpec::new(400, dim, 400 * dim as u64 * 8 / 4);
    spec.levels = rng.random_range(1..4);
    spec.hot_threshold = 2.0;
    spec.medium_threshold = 0.5;
    spec.store_seed = seed;
    spec.sketch_seed = seed + 1;
    let mut config = TrainConfig::new(TrainMode::Tiered);
    config.batch_size = 8;
    config.maintenance_interval = 3;
    config.seed = seed;
    let mut trainer = Trainer::from_spec(config, &spec).unwrap();
    let mut warm = ZipfStreamSpec::new(400, 1.2, 8 * 12, seed).generate().unwrap();
    trainer.run(&mut warm, 12).unwrap();

    let batch: Vec<StreamEvent> = (0..rng.random_range(1..10))
        .map(|_| StreamEvent::new(rng.random_range(0..60), rng.random_bool(0.5)))
        .collect();
    let grads = trainer.row_gradients(&batch).unwrap();
    let h = 1e-6;
    for (&(table, row), g) in &grads.rows {
        for j in 0..dim {
            let orig = trainer.store().row(table, row)[j];
            trainer.store_mut().row_mut(table, row)[j] = orig + h;
            let up = trainer.batch_loss(&batch).unwrap();
            trainer.store_mut().row_mut(table, row)[j] = orig - h;
            let down = trainer.batch_loss(&batch).unwrap();
            trainer.store_mut().row_mut(table, row)[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            assert!(close(g[j], numeric), "seed {seed} {table:?}[{row}][{j}]: {} vs {numeric}", g[j]);
        }
    }
    let get = |t: &Trainer, j: usize| if j < dim { t.predictor().weights[j] } else { t.predictor().bias };
    let set = |t: &mut Trainer, j: usize, v: f64| {
        let p = t.predictor_mut();
        if j < dim {
            p.weights[j] = v;
        } else {
            p.bias = v;
        }
    };
    for j in 0..=dim {
        let analytic = if j < dim { grads.weights[j] } else { grads.bias };
        let orig = get(&trainer, j);
        set(&mut trainer, j, orig + h);
        let up = trainer.batch_loss(&batch).unwrap();
        set(&mut trainer, j, orig - h);
        let down = trainer.batch_loss(&batch).unwrap();
        set(&mut trainer, j, orig);
        let numeric = (up - down) / (2.0 * h);
        assert!(close(analytic, numeric), "seed {seed} predictor[{j}]: {analytic} vs {numeric}");
    }
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..50 {
        gradient_instance(seed);
    }
}

#[test]
fn uncompressed_training_halves_the_loss() {
    let spec = ModelSpec::new(1_000, 8, 1);
    let mut config = TrainConfig::new(TrainMode::Uncompressed);
    config.learning_rate = 1.0;
    let mut trainer = Trainer::from_spec(config, &spec).unwrap();
    let labels = LabelModel { weight_std: 4.0, noise_std: 0.0 };
    let mut stream = ZipfStreamSpec::new(1_000, 1.1, 64 * 2_000, 9).with_labels(labels).generate().unwrap();
    let metrics = trainer.run(&mut stream, 2_000).unwrap();
    let mean = |m: &[hotsketch::StepMetrics]| m.iter().map(|x| x.loss).sum::<f64>() / m.len() as f64;
    let (first, last) = (mean(&metrics[..20]), mean(&metrics[metrics.len() - 100..]));
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn collision_free_hash_table_tracks_uncompressed_exactly() {
    let (n, d) = (2_000u64, 8usize);
    let spec = ModelSpec::new(n, d, n * d as u64 * 8);
    let mut hash = Trainer::from_spec(TrainConfig::new(TrainMode::HashOnly), &spec).unwrap();
    let mut full = Trainer::from_spec(TrainConfig::new(TrainMode::Uncompressed), &spec).unwrap();
    assert_eq!(hash.store().plan().shared_rows, vec![n as usize]);
    let stream = ZipfStreamSpec::new(n, 1.1, 64 * 300, 1).generate().unwrap();
    let a = hash.run(&mut stream.clone(), 300).unwrap();
    let b = full.run(&mut stream.clone(), 300).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x.loss - y.loss).abs() <= 1e-9, "step {}: {} vs {}", x.step, x.loss, y.loss);
    }
}

#[test]
fn first_maintenance_pass_promotes() {
    let mut spec = ModelSpec::with_compression(50_000, 16, 100.0);
    spec.hot_threshold = 1.0;
    spec.medium_threshold = 0.1;
    for importance in [ImportanceMode::GradientNorm, ImportanceMode::Frequency] {
        let mut config = TrainConfig::new(TrainMode::Tiered);
        config.importance = importance;
        let interval = config.maintenance_interval;
        let mut trainer = Trainer::from_spec(config, &spec).unwrap();
        let mut stream = ZipfStreamSpec::new(50_000, 1.1, 64 * interval, 2).generate().unwrap();
        let metrics = trainer.run(&mut stream, interval).unwrap();
        assert!(metrics[..metrics.len() - 1].iter().all(|m| m.migrations == 0));
        assert!(metrics.last().unwrap().migrations >= 1, "{importance:?}");
    }
}

#[test]
fn save_and_load_mid_run_replays_bit_for_bit() {
    let mut spec = ModelSpec::with_compression(20_000, 8, 50.0);
    spec.hot_threshold = 2.0;
    let mut config = TrainConfig::new(TrainMode::Tiered);
    config.maintenance_interval = 7;
    let stream = ZipfStreamSpec::new(20_000, 1.1, 64 * 100, 3).generate().unwrap();

    let mut whole = Trainer::from_spec(config.clone(), &spec).unwrap();
    whole.attach_shadow(&TrainConfig { mode: TrainMode::Uncompressed, ..config.clone() }).unwrap();
    let expected: Vec<String> = whole.run(&mut stream.clone(), 100).unwrap().iter().map(|m| m.csv_row()).collect();

    let mut first = Trainer::from_spec(config.clone(), &spec).unwrap();
    first.attach_shadow(&TrainConfig { mode: TrainMode::Uncompressed, ..config }).unwrap();
    let mut s = stream.clone();
    let mut rows: Vec<String> = first.run(&mut s, 50).unwrap().iter().map(|m| m.csv_row()).collect();
    let mut resumed = Trainer::load(&first.save()).unwrap();
    rows.extend(resumed.run(&mut s, 50).unwrap().iter().map(|m| m.csv_row()));
    assert_eq!(rows, expected);
    assert_eq!(resumed.save(), whole.save());
}

#[test]
fn gradient_norm_matches_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let g: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
        // scale by the largest magnitude first, then sum squares
        let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let oracle = scale * g.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt();
        let ours = score_from_gradient(&g).unwrap();
        assert!((ours - oracle).abs() <= 1e-12 * oracle);
    }
    assert_eq!(score_from_frequency(3), 3.0);
}

#[test]
fn frequency_importance_tracks_exact_top_counts() {
    let mut spec = ModelSpec::with_compression(50_000, 8, 20.0);
    spec.hot_threshold = 1e9;
    spec.decay_coefficient = 1.0;
    let mut config = TrainConfig::new(TrainMode::Tiered);
    config.importance = ImportanceMode::Frequency;
    let mut trainer = Trainer::from_spec(config, &spec).unwrap();
    let stream = ZipfStreamSpec::new(50_000, 1.2, 64 * 400, 5).generate().unwrap();
    let mut oracle = ExactTopK::new(50);
    for e in stream.clone() {
        oracle.add(e.feature, 1.0);
    }
    trainer.run(&mut stream.clone(), 400).unwrap();
    let sketch = trainer.sketch().unwrap();
    // every sketch score brackets the exact count from above, and the true
    // top features are all still tracked
    for (f, count) in oracle.top_k() {
        let q = sketch.query(f);
        assert!(q.score >= count, "{f}: {} < {count}", q.score);
    }
    let found = sketch.top_k(50).iter().filter(|(f, _)| oracle.top_set().contains(f)).count();
    assert!(found >= 48, "{found} of 50");
    assert_eq!(sketch.query(FeatureId(u64::MAX - 1)).score, 0.0);
}
