//! SGD training over the compressed embedding store.
//!
//! The model is deliberately small: each event carries one categorical
//! feature, whose (pooled) embedding `e` feeds a logistic predictor
//! `σ(⟨e, u⟩ + b)`. A step over a batch:
//!
//! 1. queries the sketch for every feature and resolves its rows;
//! 2. computes the mean logistic loss and its gradients at the current
//!    parameters;
//! 3. applies plain SGD to every touched row and to the predictor;
//! 4. inserts each occurrence's importance (gradient norm of the pooled
//!    embedding, or a unit count) into the sketch, reclaiming unique rows of
//!    evicted features;
//! 5. every `maintenance_interval` steps, decays the sketch, demotes features
//!    that fell below the hot threshold and promotes hot features into free
//!    unique rows.
//!
//! An optional shadow run keeps an uncompressed copy of the model trained on
//! the same batches. A feature's shadow row is copied from the compressed
//! run's embedding the first time the feature appears, and the shadow
//! predictor starts from the compressed run's initial predictor. The
//! per-step deviation `ε_t` is the norm of the difference between the two
//! runs' per-feature embedding gradients.

use std::collections::HashMap;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{Decoder, Encoder, Truncated};
use crate::hash;
use crate::importance::{self, ImportanceError, ImportanceMode};
use crate::sketch::{FeatureClass, FeatureId, HotSketch, SketchConfig, SketchError, SlotOutcome};
use crate::store::{BudgetPlan, BudgetRequest, EmbeddingRef, EmbeddingStore, StoreError, TableRef};
use crate::workload::StreamEvent;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("shadow run does not match the main run: {0}")]
    ConfigMismatch(String),
    #[error("feature {0} outside the model universe")]
    FeatureOutOfRange(FeatureId),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Importance(#[from] ImportanceError),
    #[error("unsupported trainer checkpoint layout")]
    VersionMismatch,
    #[error("corrupt trainer checkpoint: {0}")]
    CorruptState(String),
}

impl From<Truncated> for TrainError {
    fn from(_: Truncated) -> Self {
        TrainError::CorruptState("truncated".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// Sketch-driven hot/medium/cold store.
    Tiered,
    /// Single shared hash table, no sketch.
    HashOnly,
    /// One row per feature.
    Uncompressed,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Tiered => "tiered",
            TrainMode::HashOnly => "hash",
            TrainMode::Uncompressed => "uncompressed",
        }
    }

    fn code(self) -> u64 {
        match self {
            TrainMode::Tiered => 0,
            TrainMode::HashOnly => 1,
            TrainMode::Uncompressed => 2,
        }
    }

    fn from_code(code: u64) -> Option<Self> {
        [TrainMode::Tiered, TrainMode::HashOnly, TrainMode::Uncompressed].into_iter().find(|m| m.code() == code)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: u64,
    /// Steps between migration passes.
    pub maintenance_interval: u64,
    pub mode: TrainMode,
    pub importance: ImportanceMode,
    /// Seed for the predictor initialization.
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(mode: TrainMode) -> Self {
        Self {
            learning_rate: 0.5,
            batch_size: 64,
            steps: 1000,
            maintenance_interval: 100,
            mode,
            importance: ImportanceMode::GradientNorm,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be positive".into()));
        }
        if self.maintenance_interval == 0 {
            return Err(TrainError::InvalidConfig("maintenance interval must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to build the store and sketch for any mode at a given
/// byte budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub features: u64,
    pub dim: usize,
    pub budget_bytes: u64,
    pub hot_percentage: f64,
    pub levels: usize,
    pub level_split: Vec<f64>,
    pub hot_threshold: f64,
    pub medium_threshold: f64,
    pub decay_coefficient: f64,
    pub store_seed: u64,
    pub sketch_seed: u64,
}

impl ModelSpec {
    pub fn new(features: u64, dim: usize, budget_bytes: u64) -> Self {
        Self {
            features,
            dim,
            budget_bytes,
            hot_percentage: 0.7,
            levels: 2,
            level_split: Vec::new(),
            hot_threshold: 1.0,
            medium_threshold: 0.1,
            decay_coefficient: 0.98,
            store_seed: 0,
            sketch_seed: 0,
        }
    }

    /// Budget of an uncompressed table divided by `ratio`.
    pub fn with_compression(features: u64, dim: usize, ratio: f64) -> Self {
        let full = features * dim as u64 * crate::store::DEFAULT_SCALAR_BYTES;
        Self::new(features, dim, (full as f64 / ratio).floor() as u64)
    }

    pub fn build(&self, mode: TrainMode) -> Result<(EmbeddingStore, Option<HotSketch>), TrainError> {
        let sb = crate::store::DEFAULT_SCALAR_BYTES;
        match mode {
            TrainMode::Tiered => {
                let mut req = BudgetRequest::new(self.features, self.dim, self.budget_bytes);
                req.hot_percentage = self.hot_percentage;
                req.levels = self.levels;
                req.level_split = self.level_split.clone();
                let plan = BudgetPlan::plan(&req)?;
                let sketch_cfg = SketchConfig::new(plan.hot_rows)
                    .with_slots(req.slots_per_hot_row)
                    .with_thresholds(self.hot_threshold, self.medium_threshold)
                    .with_decay(self.decay_coefficient, 0)
                    .with_seed(self.sketch_seed);
                Ok((EmbeddingStore::new(plan, self.store_seed)?, Some(HotSketch::new(sketch_cfg)?)))
            }
            TrainMode::HashOnly => {
                let plan = BudgetPlan::hash_only(self.features, self.dim, self.budget_bytes, sb)?;
                Ok((EmbeddingStore::new(plan, self.store_seed)?, None))
            }
            TrainMode::Uncompressed => {
                let plan = BudgetPlan::uncompressed(self.features, self.dim, sb)?;
                Ok((EmbeddingStore::new(plan, self.store_seed)?, None))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticPredictor {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticPredictor {
    /// Weights from `U(-1/sqrt(d), 1/sqrt(d))`, zero bias.
    pub fn new(dim: usize, seed: u64) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bounds");
        let mut rng = ChaCha8Rng::seed_from_u64(hash::derive_seed(seed, 0x5eed));
        Self { weights: (0..dim).map(|_| dist.sample(&mut rng)).collect(), bias: 0.0 }
    }

    pub fn logit(&self, embedding: &[f64]) -> f64 {
        embedding.iter().zip(&self.weights).map(|(e, w)| e * w).sum::<f64>() + self.bias
    }

    fn encode(&self, enc: &mut Encoder) {
        enc.usize(self.weights.len()).f64_slice(&self.weights).f64(self.bias);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, Truncated> {
        let dim = dec.usize()?;
        let weights = dec.f64_vec(dim)?;
        Ok(Self { weights, bias: dec.f64()? })
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss of a batch and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub loss: f64,
    /// Gradient with respect to each event's pooled embedding, row-major
    /// `batch × dim`.
    pub embeddings: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Forward and backward pass of the mean logistic loss for pooled
/// embeddings `embeddings` (row-major `labels.len() × dim`).
pub fn logistic_loss_and_gradients(predictor: &LogisticPredictor, embeddings: &[f64], labels: &[bool]) -> BatchGradients {
    let dim = predictor.weights.len();
    let batch = labels.len();
    assert_eq!(embeddings.len(), batch * dim);
    let scale = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut grad_e = vec![0.0; batch * dim];
    let mut grad_w = vec![0.0; dim];
    let mut grad_b = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let e = &embeddings[i * dim..(i + 1) * dim];
        let z = predictor.logit(e);
        let y = if label { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        let dz = (sigmoid(z) - y) * scale;
        for (g, w) in grad_e[i * dim..(i + 1) * dim].iter_mut().zip(&predictor.weights) {
            *g = dz * w;
        }
        for (g, x) in grad_w.iter_mut().zip(e) {
            *g += dz * x;
        }
        grad_b += dz;
    }
    BatchGradients { loss: loss * scale, embeddings: grad_e, weights: grad_w, bias: grad_b }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// 1-based step index.
    pub step: u64,
    pub loss: f64,
    pub hot_hits: usize,
    pub medium_hits: usize,
    pub cold_hits: usize,
    pub migrations: usize,
    pub epsilon: Option<f64>,
    /// Deviation restricted to features served from the unique table.
    pub epsilon_hot: Option<f64>,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str = "step,loss,hot_hits,medium_hits,cold_hits,migrations,epsilon,epsilon_hot";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        format!(
            "{},{:?},{},{},{},{},{},{}",
            self.step,
            self.loss,
            self.hot_hits,
            self.medium_hits,
            self.cold_hits,
            self.migrations,
            opt(self.epsilon),
            opt(self.epsilon_hot)
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviationTrace {
    pub epsilon: Vec<f64>,
    pub epsilon_hot: Vec<f64>,
}

impl DeviationTrace {
    pub fn from_metrics(metrics: &[StepMetrics]) -> Option<Self> {
        let epsilon = metrics.iter().map(|m| m.epsilon).collect::<Option<Vec<_>>>()?;
        let epsilon_hot = metrics.iter().map(|m| m.epsilon_hot.unwrap_or(0.0)).collect();
        Some(Self { epsilon, epsilon_hot })
    }

    fn mean_sq(values: &[f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        values.iter().map(|e| e * e).sum::<f64>() / values.len() as f64
    }

    /// Running mean of `ε_t²` over the whole trace.
    pub fn mean_sq_epsilon(&self) -> f64 {
        Self::mean_sq(&self.epsilon)
    }

    pub fn mean_sq_epsilon_hot(&self) -> f64 {
        Self::mean_sq(&self.epsilon_hot)
    }
}

/// Counters backing the smooth-promotion and level-0 stability checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MigrationAudit {
    pub promotions: usize,
    pub smooth_promotions: usize,
    pub level0_transitions: usize,
    pub level0_preserved: usize,
    last_shared: HashMap<FeatureId, (FeatureClass, usize)>,
}

impl MigrationAudit {
    fn observe(&mut self, feature: FeatureId, class: FeatureClass, row0: usize) {
        if let Some((prev, prev_row)) = self.last_shared.insert(feature, (class, row0)) {
            if prev != class {
                self.level0_transitions += 1;
                if prev_row == row0 {
                    self.level0_preserved += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Shadow {
    store: EmbeddingStore,
    initialized: Vec<bool>,
    predictor: LogisticPredictor,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    store: EmbeddingStore,
    sketch: Option<HotSketch>,
    predictor: LogisticPredictor,
    step: u64,
    shadow: Option<Shadow>,
    audit: Option<MigrationAudit>,
}

struct Forward {
    refs: Vec<EmbeddingRef>,
    classes: Vec<FeatureClass>,
    embeddings: Vec<f64>,
    labels: Vec<bool>,
}

const MAGIC: &[u8; 4] = b"TRN1";

impl Trainer {
    pub fn new(config: TrainConfig, store: EmbeddingStore, sketch: Option<HotSketch>) -> Result<Self, TrainError> {
        config.validate()?;
        match (config.mode, &sketch) {
            (TrainMode::Tiered, None) => return Err(TrainError::InvalidConfig("tiered mode needs a sketch".into())),
            (TrainMode::Tiered, Some(_)) if store.plan().hot_rows == 0 => {
                return Err(TrainError::InvalidConfig("tiered mode needs unique rows".into()))
            }
            (TrainMode::HashOnly | TrainMode::Uncompressed, Some(_)) => {
                return Err(TrainError::InvalidConfig(format!("{} mode takes no sketch", config.mode.name())))
            }
            _ => {}
        }
        if config.mode == TrainMode::Uncompressed && store.plan().shared_rows[0] as u64 != store.plan().features {
            return Err(TrainError::InvalidConfig("uncompressed mode needs one row per feature".into()));
        }
        let predictor = LogisticPredictor::new(store.dim(), config.seed);
        Ok(Self { config, store, sketch, predictor, step: 0, shadow: None, audit: None })
    }

    pub fn from_spec(config: TrainConfig, spec: &ModelSpec) -> Result<Self, TrainError> {
        let (store, sketch) = spec.build(config.mode)?;
        Self::new(config, store, sketch)
    }

    /// Attaches a lockstep uncompressed shadow run; `shadow` must agree with
    /// the main configuration on everything but the mode.
    pub fn attach_shadow(&mut self, shadow: &TrainConfig) -> Result<(), TrainError> {
        check_shadow_config(&self.config, shadow)?;
        if self.step != 0 {
            return Err(TrainError::ConfigMismatch("shadow must be attached before the first step".into()));
        }
        let plan = BudgetPlan::uncompressed(self.store.plan().features, self.store.dim(), self.store.plan().scalar_bytes)?;
        let features = plan.features as usize;
        self.shadow = Some(Shadow {
            store: EmbeddingStore::new(plan, self.store.seed())?,
            initialized: vec![false; features],
            predictor: self.predictor.clone(),
        });
        Ok(())
    }

    pub fn enable_audit(&mut self) {
        self.audit.get_or_insert_with(MigrationAudit::default);
    }

    pub fn audit(&self) -> Option<&MigrationAudit> {
        self.audit.as_ref()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut EmbeddingStore {
        &mut self.store
    }

    pub fn sketch(&self) -> Option<&HotSketch> {
        self.sketch.as_ref()
    }

    pub fn predictor(&self) -> &LogisticPredictor {
        &self.predictor
    }

    pub fn predictor_mut(&mut self) -> &mut LogisticPredictor {
        &mut self.predictor
    }

    pub fn has_shadow(&self) -> bool {
        self.shadow.is_some()
    }

    fn lookup_class(&self, feature: FeatureId) -> (FeatureClass, Option<u32>) {
        match &self.sketch {
            Some(sketch) => {
                let q = sketch.query(feature);
                (q.lookup_class(), q.handle)
            }
            None => (FeatureClass::Cold, None),
        }
    }

    fn forward(&self, batch: &[StreamEvent]) -> Result<Forward, TrainError> {
        let dim = self.store.dim();
        let mut refs = Vec::with_capacity(batch.len());
        let mut classes = Vec::with_capacity(batch.len());
        let mut embeddings = vec![0.0; batch.len() * dim];
        for (i, event) in batch.iter().enumerate() {
            let (class, handle) = self.lookup_class(event.feature);
            let emb = self.store.resolve(event.feature, class, handle)?;
            self.store.lookup_into(&emb, &mut embeddings[i * dim..(i + 1) * dim]);
            refs.push(emb);
            classes.push(class);
        }
        Ok(Forward { refs, classes, embeddings, labels: batch.iter().map(|e| e.label).collect() })
    }

    /// Mean batch loss at the current parameters.
    pub fn batch_loss(&self, batch: &[StreamEvent]) -> Result<f64, TrainError> {
        let fwd = self.forward(batch)?;
        Ok(logistic_loss_and_gradients(&self.predictor, &fwd.embeddings, &fwd.labels).loss)
    }

    /// Gradients of the mean batch loss with respect to every touched table
    /// row and the predictor, at the current parameters.
    pub fn row_gradients(&self, batch: &[StreamEvent]) -> Result<RowGradients, TrainError> {
        let dim = self.store.dim();
        let fwd = self.forward(batch)?;
        let grads = logistic_loss_and_gradients(&self.predictor, &fwd.embeddings, &fwd.labels);
        let mut rows: HashMap<(TableRef, usize), Vec<f64>> = HashMap::new();
        for (i, emb) in fwd.refs.iter().enumerate() {
            for &key in &emb.rows {
                let acc = rows.entry(key).or_insert_with(|| vec![0.0; dim]);
                for (a, g) in acc.iter_mut().zip(&grads.embeddings[i * dim..(i + 1) * dim]) {
                    *a += g;
                }
            }
        }
        Ok(RowGradients { loss: grads.loss, rows, weights: grads.weights, bias: grads.bias })
    }

    /// One SGD step on `batch`.
    pub fn step(&mut self, batch: &[StreamEvent]) -> Result<StepMetrics, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::InvalidConfig("empty batch".into()));
        }
        let features = self.store.plan().features;
        if self.shadow.is_some() {
            if let Some(e) = batch.iter().find(|e| e.feature.0 >= features) {
                return Err(TrainError::FeatureOutOfRange(e.feature));
            }
        }
        let dim = self.store.dim();
        let lr = self.config.learning_rate;
        let fwd = self.forward(batch)?;
        let grads = logistic_loss_and_gradients(&self.predictor, &fwd.embeddings, &fwd.labels);

        let mut metrics = StepMetrics {
            step: self.step + 1,
            loss: grads.loss,
            hot_hits: 0,
            medium_hits: 0,
            cold_hits: 0,
            migrations: 0,
            epsilon: None,
            epsilon_hot: None,
        };
        for (i, &class) in fwd.classes.iter().enumerate() {
            match class {
                FeatureClass::Hot => metrics.hot_hits += 1,
                FeatureClass::Medium => metrics.medium_hits += 1,
                FeatureClass::Cold => metrics.cold_hits += 1,
            }
            if let (Some(audit), Some(row0)) = (self.audit.as_mut(), fwd.refs[i].level0_row()) {
                if class != FeatureClass::Hot {
                    audit.observe(batch[i].feature, class, row0);
                }
            }
        }

        if self.shadow.is_some() {
            let (eps, eps_hot) = self.shadow_step(batch, &fwd, &grads);
            metrics.epsilon = Some(eps);
            metrics.epsilon_hot = Some(eps_hot);
        }

        for (i, emb) in fwd.refs.iter().enumerate() {
            self.store.apply_gradient(emb, &grads.embeddings[i * dim..(i + 1) * dim], lr);
        }
        for (w, g) in self.predictor.weights.iter_mut().zip(&grads.weights) {
            *w -= lr * g;
        }
        self.predictor.bias -= lr * grads.bias;

        if let Some(sketch) = self.sketch.as_mut() {
            for (i, event) in batch.iter().enumerate() {
                let delta = match self.config.importance {
                    ImportanceMode::GradientNorm => {
                        importance::score_from_gradient(&grads.embeddings[i * dim..(i + 1) * dim])?
                    }
                    ImportanceMode::Frequency => importance::score_from_frequency(1),
                };
                if let SlotOutcome::Evicted { victim, released: Some(h) } = sketch.insert(event.feature, delta)? {
                    self.store.release(victim, h)?;
                    metrics.migrations += 1;
                }
            }
            for feature in sketch.take_pending_demotions() {
                if sketch.query(feature).handle.is_some() {
                    self.store.demote(sketch, feature)?;
                    metrics.migrations += 1;
                }
            }
        }

        self.step += 1;
        if self.sketch.is_some() && self.step % self.config.maintenance_interval == 0 {
            metrics.migrations += self.maintain()?;
        }
        Ok(metrics)
    }

    /// Decay, demotion and promotion pass. Returns the number of migrations.
    pub fn maintain(&mut self) -> Result<usize, TrainError> {
        let Some(sketch) = self.sketch.as_mut() else { return Ok(0) };
        let mut migrations = 0;
        for feature in sketch.decay() {
            self.store.demote(sketch, feature)?;
            migrations += 1;
        }
        for (feature, _) in sketch.promotion_candidates() {
            if self.store.free_rows() == 0 {
                break;
            }
            let before = self.audit.is_some().then(|| {
                let q = sketch.query(feature);
                self.store.resolve(feature, q.lookup_class(), q.handle).map(|r| self.store.lookup(&r))
            });
            let event = self.store.promote(sketch, feature)?;
            migrations += 1;
            if let (Some(audit), Some(before)) = (self.audit.as_mut(), before) {
                let after = self.store.lookup(&self.store.resolve(feature, FeatureClass::Hot, Some(event.unique_row))?);
                audit.promotions += 1;
                if before? == after {
                    audit.smooth_promotions += 1;
                }
            }
        }
        self.store.check_consistency(sketch).map_err(TrainError::Invariant)?;
        Ok(migrations)
    }

    /// Advances the shadow run on `batch` and returns `(ε_t, ε_t restricted
    /// to hot features)`.
    fn shadow_step(&mut self, batch: &[StreamEvent], fwd: &Forward, grads: &BatchGradients) -> (f64, f64) {
        let dim = self.store.dim();
        let lr = self.config.learning_rate;
        let shadow = self.shadow.as_mut().expect("shadow attached");
        let mut rows = Vec::with_capacity(batch.len());
        let mut embeddings = vec![0.0; batch.len() * dim];
        for (i, event) in batch.iter().enumerate() {
            let f = event.feature;
            let row = shadow.store.shared_row(0, f);
            if !shadow.initialized[f.0 as usize] {
                shadow.initialized[f.0 as usize] = true;
                shadow.store.row_mut(TableRef::Shared(0), row).copy_from_slice(&fwd.embeddings[i * dim..(i + 1) * dim]);
            }
            embeddings[i * dim..(i + 1) * dim].copy_from_slice(shadow.store.row(TableRef::Shared(0), row));
            rows.push(row);
        }
        let shadow_grads = logistic_loss_and_gradients(&shadow.predictor, &embeddings, &fwd.labels);

        // per-feature gradient difference, accumulated in first-occurrence order
        let mut order: Vec<(FeatureId, FeatureClass)> = Vec::new();
        let mut diff: HashMap<FeatureId, (usize, Vec<f64>)> = HashMap::new();
        for (i, event) in batch.iter().enumerate() {
            let entry = diff.entry(event.feature).or_insert_with(|| {
                order.push((event.feature, fwd.classes[i]));
                (order.len() - 1, vec![0.0; dim])
            });
            let range = i * dim..(i + 1) * dim;
            for ((d, g), s) in entry.1.iter_mut().zip(&grads.embeddings[range.clone()]).zip(&shadow_grads.embeddings[range]) {
                *d += g - s;
            }
        }
        let (mut total, mut hot) = (0.0, 0.0);
        for (feature, class) in &order {
            let sq: f64 = diff[feature].1.iter().map(|d| d * d).sum();
            total += sq;
            if *class == FeatureClass::Hot {
                hot += sq;
            }
        }

        for (i, &row) in rows.iter().enumerate() {
            for (w, g) in shadow.store.row_mut(TableRef::Shared(0), row).iter_mut().zip(&shadow_grads.embeddings[i * dim..(i + 1) * dim]) {
                *w -= lr * g;
            }
        }
        for (w, g) in shadow.predictor.weights.iter_mut().zip(&shadow_grads.weights) {
            *w -= lr * g;
        }
        shadow.predictor.bias -= lr * shadow_grads.bias;
        (total.sqrt(), hot.sqrt())
    }

    /// Pulls up to `steps` batches from `stream`, stopping early when it runs
    /// dry. A trailing partial batch is used as is.
    pub fn run(
        &mut self,
        stream: &mut impl Iterator<Item = StreamEvent>,
        steps: u64,
    ) -> Result<Vec<StepMetrics>, TrainError> {
        let mut out = Vec::new();
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..steps {
            batch.clear();
            batch.extend(stream.by_ref().take(self.config.batch_size));
            if batch.is_empty() {
                break;
            }
            out.push(self.step(&batch)?);
        }
        Ok(out)
    }

    /// Serialized trainer state: configuration, step counter, predictor,
    /// store, sketch and shadow. The migration audit is not persisted.
    pub fn save(&self) -> Vec<u8> {
        let c = &self.config;
        let mut enc = Encoder::with_magic(MAGIC);
        enc.f64(c.learning_rate)
            .usize(c.batch_size)
            .u64(c.steps)
            .u64(c.maintenance_interval)
            .u64(c.mode.code())
            .bool(c.importance == ImportanceMode::Frequency)
            .u64(c.seed)
            .u64(self.step);
        self.predictor.encode(&mut enc);
        enc.block(&self.store.snapshot());
        enc.bool(self.sketch.is_some());
        if let Some(sketch) = &self.sketch {
            enc.block(&sketch.snapshot());
        }
        enc.bool(self.shadow.is_some());
        if let Some(shadow) = &self.shadow {
            enc.block(&shadow.store.snapshot());
            enc.usize(shadow.initialized.len());
            enc.bytes(&shadow.initialized.iter().map(|&b| b as u8).collect::<Vec<_>>());
            shadow.predictor.encode(&mut enc);
        }
        enc.finish()
    }

    pub fn load(bytes: &[u8]) -> Result<Self, TrainError> {
        let mut dec = Decoder::new(bytes);
        if !dec.magic(MAGIC).map_err(|_| TrainError::VersionMismatch)? {
            return Err(TrainError::VersionMismatch);
        }
        let learning_rate = dec.f64()?;
        let batch_size = dec.usize()?;
        let steps = dec.u64()?;
        let maintenance_interval = dec.u64()?;
        let mode = TrainMode::from_code(dec.u64()?).ok_or_else(|| TrainError::CorruptState("mode".into()))?;
        let importance = if dec.bool()? { ImportanceMode::Frequency } else { ImportanceMode::GradientNorm };
        let seed = dec.u64()?;
        let config = TrainConfig { learning_rate, batch_size, steps, maintenance_interval, mode, importance, seed };
        config.validate().map_err(|e| TrainError::CorruptState(e.to_string()))?;
        let step = dec.u64()?;
        let predictor = LogisticPredictor::decode(&mut dec)?;
        let store = EmbeddingStore::restore(dec.block()?)?;
        let sketch = if dec.bool()? { Some(HotSketch::restore(dec.block()?)?) } else { None };
        let shadow = if dec.bool()? {
            let store = EmbeddingStore::restore(dec.block()?)?;
            let len = dec.usize()?;
            let initialized = dec.take(len)?.iter().map(|&b| b != 0).collect();
            let predictor = LogisticPredictor::decode(&mut dec)?;
            Some(Shadow { store, initialized, predictor })
        } else {
            None
        };
        if !dec.is_empty() {
            return Err(TrainError::CorruptState("trailing bytes".into()));
        }
        if predictor.weights.len() != store.dim() {
            return Err(TrainError::CorruptState("predictor and store dimensions differ".into()));
        }
        let mut trainer = Self::new(config, store, sketch)?;
        trainer.predictor = predictor;
        trainer.step = step;
        trainer.shadow = shadow;
        Ok(trainer)
    }
}

/// Gradients scattered onto table rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGradients {
    pub loss: f64,
    pub rows: HashMap<(TableRef, usize), Vec<f64>>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn check_shadow_config(main: &TrainConfig, shadow: &TrainConfig) -> Result<(), TrainError> {
    if shadow.mode != TrainMode::Uncompressed {
        return Err(TrainError::ConfigMismatch(format!("shadow must be uncompressed, got {}", shadow.mode.name())));
    }
    if main.learning_rate != shadow.learning_rate {
        return Err(TrainError::ConfigMismatch("learning rates differ".into()));
    }
    if main.batch_size != shadow.batch_size {
        return Err(TrainError::ConfigMismatch("batch sizes differ".into()));
    }
    if main.seed != shadow.seed {
        return Err(TrainError::ConfigMismatch("initialization seeds differ".into()));
    }
    Ok(())
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<StepMetrics>,
    pub deviation: Option<DeviationTrace>,
    pub trainer: Trainer,
}

/// Trains `config.steps` steps over `stream`, optionally tracing the
/// deviation against a lockstep uncompressed shadow.
pub fn train(
    stream: impl IntoIterator<Item = StreamEvent>,
    store: EmbeddingStore,
    sketch: Option<HotSketch>,
    config: TrainConfig,
    trace_deviation: bool,
) -> Result<TrainOutcome, TrainError> {
    let steps = config.steps;
    let mut trainer = Trainer::new(config, store, sketch)?;
    if trace_deviation {
        let shadow = TrainConfig { mode: TrainMode::Uncompressed, ..trainer.config.clone() };
        trainer.attach_shadow(&shadow)?;
    }
    let metrics = trainer.run(&mut stream.into_iter(), steps)?;
    let deviation = if trace_deviation { DeviationTrace::from_metrics(&metrics) } else { None };
    Ok(TrainOutcome { metrics, deviation, trainer })
}

/// Validates that a shadow configuration can be paired with `main`.
pub fn shadow_deviation(main: &TrainConfig, shadow: &TrainConfig) -> Result<(), TrainError> {
    check_shadow_config(main, shadow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::ZipfStreamSpec;

    fn spec() -> ModelSpec {
        let mut s = ModelSpec::with_compression(2000, 8, 20.0);
        s.hot_threshold = 0.05;
        s.medium_threshold = 0.01;
        s
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert_eq!(sigmoid(-1000.0), 0.0);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(TrainMode::HashOnly);
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(TrainMode::HashOnly);
        c.maintenance_interval = 0;
        assert!(c.validate().is_err());
        let (store, _) = spec().build(TrainMode::HashOnly).unwrap();
        assert!(Trainer::new(TrainConfig::new(TrainMode::Tiered), store, None).is_err());
    }

    #[test]
    fn hit_counts_sum_to_batch() {
        let mut t = Trainer::from_spec(TrainConfig::new(TrainMode::Tiered), &spec()).unwrap();
        let mut stream = ZipfStreamSpec::new(2000, 1.1, 64 * 300, 1).generate().unwrap();
        for m in t.run(&mut stream, 300).unwrap() {
            assert_eq!(m.hot_hits + m.medium_hits + m.cold_hits, 64);
        }
        t.store().check_consistency(t.sketch().unwrap()).unwrap();
    }

    #[test]
    fn uncompressed_shadow_of_itself_has_zero_deviation() {
        let config = TrainConfig::new(TrainMode::Uncompressed);
        let stream = ZipfStreamSpec::new(2000, 1.1, 64 * 50, 2).generate().unwrap();
        let (store, sketch) = spec().build(TrainMode::Uncompressed).unwrap();
        let out = train(stream, store, sketch, TrainConfig { steps: 50, ..config }, true).unwrap();
        let trace = out.deviation.unwrap();
        assert_eq!(trace.epsilon.len(), 50);
        assert!(trace.epsilon.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn shadow_config_mismatch() {
        let main = TrainConfig::new(TrainMode::Tiered);
        assert!(matches!(shadow_deviation(&main, &main), Err(TrainError::ConfigMismatch(_))));
        let shadow = TrainConfig { mode: TrainMode::Uncompressed, batch_size: 3, ..main.clone() };
        assert!(matches!(shadow_deviation(&main, &shadow), Err(TrainError::ConfigMismatch(_))));
        let shadow = TrainConfig { mode: TrainMode::Uncompressed, ..main.clone() };
        assert!(shadow_deviation(&main, &shadow).is_ok());
    }

    #[test]
    fn save_load_roundtrip() {
        let mut t = Trainer::from_spec(TrainConfig::new(TrainMode::Tiered), &spec()).unwrap();
        t.attach_shadow(&TrainConfig::new(TrainMode::Uncompressed)).unwrap();
        let mut stream = ZipfStreamSpec::new(2000, 1.1, 64 * 120, 3).generate().unwrap();
        t.run(&mut stream, 120).unwrap();
        let bytes = t.save();
        let back = Trainer::load(&bytes).unwrap();
        assert_eq!(back.save(), bytes);
        assert!(matches!(Trainer::load(b"XXXX"), Err(TrainError::VersionMismatch)));
        assert!(Trainer::load(&bytes[..bytes.len() / 2]).is_err());
    }
}
