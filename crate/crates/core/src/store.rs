//! Embedding tables under a byte budget.
//!
//! The store owns one unique table for hot features and `L` shared hash
//! tables for everything else:
//!
//! * hot: one row of the unique table, addressed by the handle kept in the
//!   sketch;
//! * medium: one row from every shared level, pooled by summation;
//! * cold: one row from level 0.
//!
//! The level-0 row of a feature depends only on the feature, the table size
//! and the level seed, so a feature moving between medium and cold keeps the
//! same first-level vector.
//!
//! Memory is accounted in scalars of `scalar_bytes` bytes. A sketch slot has
//! three fields (feature, score, handle) of one scalar each, and the sketch
//! keeps four slots per hot row, so sketch and hot table share their budget
//! in the ratio `12 : d`.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{Decoder, Encoder, Truncated};
use crate::hash::{self, DomainPermutation};
use crate::sketch::{FeatureClass, FeatureId, HotSketch, RowHandle, SketchError};

pub const SLOT_FIELDS: u64 = 3;
pub const DEFAULT_SLOTS_PER_HOT_ROW: usize = 4;
pub const DEFAULT_SCALAR_BYTES: u64 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("budget too small: {0}")]
    BudgetTooSmall(String),
    #[error("invalid budget request: {0}")]
    InvalidBudget(String),
    #[error("feature {0} has no unique-row handle")]
    HandleMissing(FeatureId),
    #[error("feature {0} already holds a unique row")]
    AlreadyHot(FeatureId),
    #[error("feature {0} is not classified hot")]
    NotHot(FeatureId),
    #[error("no free unique row")]
    NoFreeRow,
    #[error("row {row} out of bounds for {table:?}")]
    RowOutOfBounds { table: TableRef, row: usize },
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error("unsupported table checkpoint layout")]
    VersionMismatch,
    #[error("corrupt table checkpoint: {0}")]
    CorruptState(String),
}

impl From<Truncated> for StoreError {
    fn from(_: Truncated) -> Self {
        StoreError::CorruptState("truncated".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetRequest {
    /// Feature universe size `n`.
    pub features: u64,
    pub dim: usize,
    /// Total budget `M` in bytes.
    pub total_bytes: u64,
    /// Share of `M` for sketch plus hot table, in `(0, 1]`.
    pub hot_percentage: f64,
    pub levels: usize,
    /// Fractions of the non-hot budget per level. Empty means equal split.
    pub level_split: Vec<f64>,
    pub scalar_bytes: u64,
    pub slots_per_hot_row: usize,
    /// Lower bound on rows per shared level. `0` rejects plans that leave a
    /// level empty.
    pub shared_min_rows: usize,
}

impl BudgetRequest {
    pub fn new(features: u64, dim: usize, total_bytes: u64) -> Self {
        Self {
            features,
            dim,
            total_bytes,
            hot_percentage: 0.7,
            levels: 2,
            level_split: Vec::new(),
            scalar_bytes: DEFAULT_SCALAR_BYTES,
            slots_per_hot_row: DEFAULT_SLOTS_PER_HOT_ROW,
            shared_min_rows: 0,
        }
    }

    fn split(&self) -> Result<Vec<f64>, StoreError> {
        if self.level_split.is_empty() {
            return Ok(vec![1.0 / self.levels as f64; self.levels]);
        }
        if self.level_split.len() != self.levels {
            return Err(StoreError::InvalidBudget(format!(
                "level_split has {} entries for {} levels",
                self.level_split.len(),
                self.levels
            )));
        }
        if self.level_split.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(StoreError::InvalidBudget("level_split entries must be finite and non-negative".into()));
        }
        let total: f64 = self.level_split.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(StoreError::InvalidBudget(format!("level_split sums to {total}, expected 1")));
        }
        Ok(self.level_split.clone())
    }
}

/// Resolved allocation of a byte budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetPlan {
    pub features: u64,
    pub dim: usize,
    pub total_bytes: u64,
    pub hot_percentage: f64,
    pub scalar_bytes: u64,
    /// Unique-table rows `k`.
    pub hot_rows: usize,
    pub sketch_slots: usize,
    pub shared_rows: Vec<usize>,
}

impl BudgetPlan {
    /// Largest hot table whose sketch and rows fit in `hot_percentage * M`,
    /// with the rest of `M` split across the shared levels.
    pub fn plan(req: &BudgetRequest) -> Result<Self, StoreError> {
        if req.features == 0 || req.dim == 0 || req.levels == 0 || req.scalar_bytes == 0 || req.slots_per_hot_row == 0
        {
            return Err(StoreError::InvalidBudget(
                "features, dim, levels, scalar_bytes and slots_per_hot_row must be positive".into(),
            ));
        }
        if !(req.hot_percentage > 0.0 && req.hot_percentage <= 1.0) {
            return Err(StoreError::InvalidBudget(format!("hot_percentage {} outside (0, 1]", req.hot_percentage)));
        }
        let split = req.split()?;
        let row_bytes = req.dim as u64 * req.scalar_bytes;
        let per_hot = (req.slots_per_hot_row as u64 * SLOT_FIELDS + req.dim as u64) * req.scalar_bytes;

        let hot_budget = ((req.hot_percentage * req.total_bytes as f64).floor() as u64).min(req.total_bytes);
        let shared_budget = req.total_bytes - hot_budget;
        let mut hot_rows = (hot_budget / per_hot).min(req.features) as usize;

        let mut shared_rows: Vec<usize> = split
            .iter()
            .map(|f| (((shared_budget as f64 * f) / row_bytes as f64).floor() as usize).max(req.shared_min_rows))
            .collect();
        if req.shared_min_rows == 0 {
            // float rounding in the split must not push the shared tables past their share
            while shared_rows.iter().sum::<usize>() as u64 * row_bytes > shared_budget {
                let widest = (0..shared_rows.len()).max_by_key(|&l| (shared_rows[l], std::cmp::Reverse(l))).unwrap();
                shared_rows[widest] -= 1;
            }
        }
        if let Some(level) = shared_rows.iter().position(|&r| r == 0) {
            return Err(StoreError::BudgetTooSmall(format!("shared level {level} gets no rows")));
        }

        let mut plan = Self {
            features: req.features,
            dim: req.dim,
            total_bytes: req.total_bytes,
            hot_percentage: req.hot_percentage,
            scalar_bytes: req.scalar_bytes,
            hot_rows,
            sketch_slots: hot_rows * req.slots_per_hot_row,
            shared_rows,
        };
        while plan.allocated_bytes() > req.total_bytes && hot_rows > 0 {
            hot_rows -= 1;
            plan.hot_rows = hot_rows;
            plan.sketch_slots = hot_rows * req.slots_per_hot_row;
        }
        if plan.hot_rows == 0 {
            return Err(StoreError::BudgetTooSmall("no room for a single hot row".into()));
        }
        if plan.allocated_bytes() > req.total_bytes {
            return Err(StoreError::BudgetTooSmall("minimum shared rows exceed the budget".into()));
        }
        Ok(plan)
    }

    /// A single shared table taking the whole budget; no sketch, no hot rows.
    pub fn hash_only(features: u64, dim: usize, total_bytes: u64, scalar_bytes: u64) -> Result<Self, StoreError> {
        if features == 0 || dim == 0 || scalar_bytes == 0 {
            return Err(StoreError::InvalidBudget("features, dim and scalar_bytes must be positive".into()));
        }
        let rows = (total_bytes / (dim as u64 * scalar_bytes)) as usize;
        if rows == 0 {
            return Err(StoreError::BudgetTooSmall("shared table gets no rows".into()));
        }
        Ok(Self {
            features,
            dim,
            total_bytes,
            hot_percentage: 0.0,
            scalar_bytes,
            hot_rows: 0,
            sketch_slots: 0,
            shared_rows: vec![rows],
        })
    }

    /// One row per feature, collision free by construction.
    pub fn uncompressed(features: u64, dim: usize, scalar_bytes: u64) -> Result<Self, StoreError> {
        let total = features * dim as u64 * scalar_bytes;
        let mut plan = Self::hash_only(features, dim, total, scalar_bytes)?;
        plan.shared_rows = vec![features as usize];
        Ok(plan)
    }

    pub fn levels(&self) -> usize {
        self.shared_rows.len()
    }

    pub fn row_bytes(&self) -> u64 {
        self.dim as u64 * self.scalar_bytes
    }

    pub fn sketch_bytes(&self) -> u64 {
        self.sketch_slots as u64 * SLOT_FIELDS * self.scalar_bytes
    }

    pub fn hot_table_bytes(&self) -> u64 {
        self.hot_rows as u64 * self.row_bytes()
    }

    pub fn shared_bytes(&self) -> u64 {
        self.shared_rows.iter().sum::<usize>() as u64 * self.row_bytes()
    }

    pub fn allocated_bytes(&self) -> u64 {
        self.sketch_bytes() + self.hot_table_bytes() + self.shared_bytes()
    }

    pub fn uncompressed_bytes(&self) -> u64 {
        self.features * self.row_bytes()
    }

    /// Uncompressed table bytes over allocated bytes.
    pub fn compression_ratio(&self) -> f64 {
        self.uncompressed_bytes() as f64 / self.allocated_bytes() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TableRef {
    Unique,
    Shared(u8),
}

/// Rows making up one feature's embedding, pooled by summation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingRef {
    pub rows: Vec<(TableRef, usize)>,
}

impl EmbeddingRef {
    pub fn level0_row(&self) -> Option<usize> {
        self.rows.iter().find(|(t, _)| *t == TableRef::Shared(0)).map(|&(_, r)| r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MigrationDirection {
    Promote,
    Demote,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MigrationEvent {
    pub feature: FeatureId,
    pub direction: MigrationDirection,
    pub unique_row: RowHandle,
    /// Shared rows the unique row was initialized from (promotions only).
    pub source: Option<EmbeddingRef>,
}

#[derive(Debug, Clone, PartialEq)]
struct LevelIndex {
    rows: usize,
    seed: u64,
    perm: DomainPermutation,
}

impl LevelIndex {
    fn new(features: u64, rows: usize, seed: u64) -> Self {
        Self { rows, seed, perm: DomainPermutation::new(features, seed) }
    }

    #[inline]
    fn row(&self, feature: FeatureId) -> usize {
        if feature.0 < self.perm.domain() {
            (self.perm.apply(feature.0) % self.rows as u64) as usize
        } else {
            hash::reduce(hash::seeded(feature.0, self.seed), self.rows)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SharedTable {
    index: LevelIndex,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    plan: BudgetPlan,
    seed: u64,
    unique: Vec<f64>,
    /// Stack of free unique rows; the next allocation pops from the end.
    free_rows: Vec<RowHandle>,
    owners: Vec<FeatureId>,
    levels: Vec<SharedTable>,
}

const MAGIC: &[u8; 4] = b"ETB1";

fn level_seed(seed: u64, level: usize) -> u64 {
    hash::derive_seed(seed, 0x1000 + level as u64)
}

fn init_seed(seed: u64, level: usize) -> u64 {
    hash::derive_seed(seed, 0x2000 + level as u64)
}

impl EmbeddingStore {
    /// Shared rows are drawn from `U(-1/sqrt(d), 1/sqrt(d))`; unique rows
    /// start at zero and are overwritten on promotion.
    pub fn new(plan: BudgetPlan, seed: u64) -> Result<Self, StoreError> {
        if plan.levels() == 0 || plan.levels() > u8::MAX as usize + 1 {
            return Err(StoreError::InvalidBudget(format!("{} shared levels", plan.levels())));
        }
        if plan.hot_rows > RowHandle::MAX as usize {
            return Err(StoreError::InvalidBudget("hot table too large for row handles".into()));
        }
        let d = plan.dim;
        let bound = 1.0 / (d as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bounds");
        let levels = plan
            .shared_rows
            .iter()
            .enumerate()
            .map(|(level, &rows)| {
                let mut rng = ChaCha8Rng::seed_from_u64(init_seed(seed, level));
                SharedTable {
                    index: LevelIndex::new(plan.features, rows, level_seed(seed, level)),
                    data: (0..rows * d).map(|_| dist.sample(&mut rng)).collect(),
                }
            })
            .collect();
        Ok(Self {
            unique: vec![0.0; plan.hot_rows * d],
            free_rows: (0..plan.hot_rows as RowHandle).rev().collect(),
            owners: vec![FeatureId::EMPTY; plan.hot_rows],
            levels,
            plan,
            seed,
        })
    }

    pub fn plan(&self) -> &BudgetPlan {
        &self.plan
    }

    pub fn dim(&self) -> usize {
        self.plan.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn free_rows(&self) -> usize {
        self.free_rows.len()
    }

    pub fn live_rows(&self) -> usize {
        self.plan.hot_rows - self.free_rows.len()
    }

    pub fn owner(&self, row: RowHandle) -> Option<FeatureId> {
        self.owners.get(row as usize).copied().filter(|f| !f.is_empty())
    }

    pub fn allocated_bytes(&self) -> u64 {
        self.plan.allocated_bytes()
    }

    /// Row index of `feature` in shared level `level`.
    pub fn shared_row(&self, level: usize, feature: FeatureId) -> usize {
        self.levels[level].index.row(feature)
    }

    pub fn resolve(
        &self,
        feature: FeatureId,
        class: FeatureClass,
        handle: Option<RowHandle>,
    ) -> Result<EmbeddingRef, StoreError> {
        let rows = match class {
            FeatureClass::Hot => {
                let h = handle.ok_or(StoreError::HandleMissing(feature))? as usize;
                if h >= self.plan.hot_rows {
                    return Err(StoreError::RowOutOfBounds { table: TableRef::Unique, row: h });
                }
                vec![(TableRef::Unique, h)]
            }
            FeatureClass::Medium => {
                (0..self.levels.len()).map(|l| (TableRef::Shared(l as u8), self.shared_row(l, feature))).collect()
            }
            FeatureClass::Cold => vec![(TableRef::Shared(0), self.shared_row(0, feature))],
        };
        Ok(EmbeddingRef { rows })
    }

    pub fn row(&self, table: TableRef, row: usize) -> &[f64] {
        let d = self.plan.dim;
        match table {
            TableRef::Unique => &self.unique[row * d..(row + 1) * d],
            TableRef::Shared(l) => &self.levels[l as usize].data[row * d..(row + 1) * d],
        }
    }

    pub fn row_mut(&mut self, table: TableRef, row: usize) -> &mut [f64] {
        let d = self.plan.dim;
        match table {
            TableRef::Unique => &mut self.unique[row * d..(row + 1) * d],
            TableRef::Shared(l) => &mut self.levels[l as usize].data[row * d..(row + 1) * d],
        }
    }

    /// Sum-pooled embedding of `emb` written into `out`.
    pub fn lookup_into(&self, emb: &EmbeddingRef, out: &mut [f64]) {
        out.fill(0.0);
        for &(table, row) in &emb.rows {
            for (o, v) in out.iter_mut().zip(self.row(table, row)) {
                *o += v;
            }
        }
    }

    pub fn lookup(&self, emb: &EmbeddingRef) -> Vec<f64> {
        let mut out = vec![0.0; self.plan.dim];
        self.lookup_into(emb, &mut out);
        out
    }

    /// SGD step on every pooled row. Sum pooling passes the gradient through
    /// unchanged to each row.
    pub fn apply_gradient(&mut self, emb: &EmbeddingRef, grad: &[f64], learning_rate: f64) {
        for &(table, row) in &emb.rows {
            for (w, g) in self.row_mut(table, row).iter_mut().zip(grad) {
                *w -= learning_rate * g;
            }
        }
    }

    /// Moves a hot feature into the unique table, initialized with its
    /// current pooled shared embedding.
    pub fn promote(&mut self, sketch: &mut HotSketch, feature: FeatureId) -> Result<MigrationEvent, StoreError> {
        let q = sketch.query(feature);
        if q.handle.is_some() {
            return Err(StoreError::AlreadyHot(feature));
        }
        if q.class != FeatureClass::Hot {
            return Err(StoreError::NotHot(feature));
        }
        let source = self.resolve(feature, q.lookup_class(), None)?;
        let row = *self.free_rows.last().ok_or(StoreError::NoFreeRow)?;
        sketch.set_handle(feature, row)?;
        self.free_rows.pop();
        let init = self.lookup(&source);
        self.row_mut(TableRef::Unique, row as usize).copy_from_slice(&init);
        self.owners[row as usize] = feature;
        Ok(MigrationEvent { feature, direction: MigrationDirection::Promote, unique_row: row, source: Some(source) })
    }

    /// Drops a feature's unique row. The row contents are discarded and the
    /// feature falls back to its shared rows.
    pub fn demote(&mut self, sketch: &mut HotSketch, feature: FeatureId) -> Result<MigrationEvent, StoreError> {
        let handle = match sketch.clear_handle(feature) {
            Ok(Some(h)) => h,
            Ok(None) | Err(SketchError::FeatureNotTracked(_)) => return Err(StoreError::HandleMissing(feature)),
            Err(e) => return Err(e.into()),
        };
        self.release(feature, handle)
    }

    /// Returns a row whose owner already left the sketch (slot eviction).
    pub fn release(&mut self, feature: FeatureId, handle: RowHandle) -> Result<MigrationEvent, StoreError> {
        let idx = handle as usize;
        if idx >= self.plan.hot_rows {
            return Err(StoreError::RowOutOfBounds { table: TableRef::Unique, row: idx });
        }
        if self.owners[idx] != feature {
            return Err(StoreError::HandleMissing(feature));
        }
        self.owners[idx] = FeatureId::EMPTY;
        self.free_rows.push(handle);
        Ok(MigrationEvent { feature, direction: MigrationDirection::Demote, unique_row: handle, source: None })
    }

    /// Checks that the sketch's handles and the store's ownership map agree.
    pub fn check_consistency(&self, sketch: &HotSketch) -> Result<(), String> {
        let live: Vec<_> = sketch.tracked().filter_map(|s| s.handle.map(|h| (s.feature, h))).collect();
        if live.len() + self.free_rows.len() != self.plan.hot_rows {
            return Err(format!(
                "{} live handles + {} free rows != {} unique rows",
                live.len(),
                self.free_rows.len(),
                self.plan.hot_rows
            ));
        }
        for (feature, h) in live {
            if self.owner(h) != Some(feature) {
                return Err(format!("row {h} owned by {:?}, sketch says {feature}", self.owner(h)));
            }
        }
        if self.allocated_bytes() > self.plan.total_bytes {
            return Err("allocation exceeds budget".into());
        }
        Ok(())
    }

    /// Table checkpoint.
    ///
    /// Layout (little-endian): `"ETB1"`, header `features u64, dim u64,
    /// total_bytes u64, hot_percentage f64, scalar_bytes u64, sketch_slots
    /// u64, hot_rows u64, levels u64, rows per level u64..., seed u64`, then
    /// the unique table row-major, the free list (`u64` count, `u32` rows),
    /// the row owners (`u64` feature per unique row, `u64::MAX` for free),
    /// and each shared table row-major.
    pub fn snapshot(&self) -> Vec<u8> {
        let p = &self.plan;
        let mut enc = Encoder::with_magic(MAGIC);
        enc.u64(p.features)
            .usize(p.dim)
            .u64(p.total_bytes)
            .f64(p.hot_percentage)
            .u64(p.scalar_bytes)
            .usize(p.sketch_slots)
            .usize(p.hot_rows)
            .usize(p.shared_rows.len());
        for &rows in &p.shared_rows {
            enc.usize(rows);
        }
        enc.u64(self.seed);
        enc.f64_slice(&self.unique);
        enc.usize(self.free_rows.len());
        for &r in &self.free_rows {
            enc.u32(r);
        }
        for f in &self.owners {
            enc.u64(f.0);
        }
        for table in &self.levels {
            enc.f64_slice(&table.data);
        }
        enc.finish()
    }

    pub fn restore(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut dec = Decoder::new(bytes);
        if !dec.magic(MAGIC).map_err(|_| StoreError::VersionMismatch)? {
            return Err(StoreError::VersionMismatch);
        }
        let features = dec.u64()?;
        let dim = dec.usize()?;
        let total_bytes = dec.u64()?;
        let hot_percentage = dec.f64()?;
        let scalar_bytes = dec.u64()?;
        let sketch_slots = dec.usize()?;
        let hot_rows = dec.usize()?;
        let level_count = dec.usize()?;
        dec.check_len(level_count, 8)?;
        let shared_rows = (0..level_count).map(|_| dec.usize()).collect::<Result<Vec<_>, _>>()?;
        let seed = dec.u64()?;
        let plan = BudgetPlan {
            features,
            dim,
            total_bytes,
            hot_percentage,
            scalar_bytes,
            hot_rows,
            sketch_slots,
            shared_rows,
        };
        if features == 0 || dim == 0 || level_count == 0 || plan.shared_rows.contains(&0) {
            return Err(StoreError::CorruptState("degenerate table header".into()));
        }
        let unique = dec.f64_vec(hot_rows.checked_mul(dim).ok_or(Truncated)?)?;
        let free_count = dec.usize()?;
        dec.check_len(free_count, 4)?;
        let free_rows = (0..free_count).map(|_| dec.u32()).collect::<Result<Vec<_>, _>>()?;
        dec.check_len(hot_rows, 8)?;
        let owners = (0..hot_rows).map(|_| dec.u64().map(FeatureId)).collect::<Result<Vec<_>, _>>()?;
        let mut levels = Vec::with_capacity(level_count);
        for (level, &rows) in plan.shared_rows.iter().enumerate() {
            let data = dec.f64_vec(rows.checked_mul(dim).ok_or(Truncated)?)?;
            levels.push(SharedTable { index: LevelIndex::new(features, rows, level_seed(seed, level)), data });
        }
        if !dec.is_empty() {
            return Err(StoreError::CorruptState("trailing bytes".into()));
        }
        let mut is_free = vec![false; hot_rows];
        for &r in &free_rows {
            let slot = is_free.get_mut(r as usize).ok_or_else(|| StoreError::CorruptState(format!("free row {r}")))?;
            if *slot || !owners[r as usize].is_empty() {
                return Err(StoreError::CorruptState(format!("free row {r} duplicated or owned")));
            }
            *slot = true;
        }
        if owners.iter().zip(&is_free).any(|(o, free)| o.is_empty() != *free) {
            return Err(StoreError::CorruptState("owner map disagrees with free list".into()));
        }
        Ok(Self { plan, seed, unique, free_rows, owners, levels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::SketchConfig;

    fn tiered_plan() -> BudgetPlan {
        BudgetPlan::plan(&BudgetRequest::new(10_000, 16, 200_000)).unwrap()
    }

    #[test]
    fn sketch_takes_three_sevenths_of_hot_share_at_dim_16() {
        let plan = tiered_plan();
        let hot_share = plan.sketch_bytes() + plan.hot_table_bytes();
        assert_eq!(plan.sketch_bytes() * 16, plan.hot_table_bytes() * 12);
        assert_eq!(plan.sketch_bytes() * 7, hot_share * 3);
        assert_eq!(plan.sketch_slots, 4 * plan.hot_rows);
    }

    #[test]
    fn hot_rows_is_largest_fitting() {
        let req = BudgetRequest::new(10_000, 16, 200_000);
        let plan = BudgetPlan::plan(&req).unwrap();
        let per_hot = (4 * 3 + 16) * 8;
        let hot_budget = (0.7f64 * 200_000.0).floor() as u64;
        assert!(plan.hot_rows as u64 * per_hot <= hot_budget);
        assert!((plan.hot_rows as u64 + 1) * per_hot > hot_budget);
        assert!(plan.allocated_bytes() <= 200_000);
        assert_eq!(plan.shared_rows.len(), 2);
        assert_eq!(plan.shared_rows[0], plan.shared_rows[1]);
    }

    #[test]
    fn full_hot_share_leaves_no_shared_rows() {
        let mut req = BudgetRequest::new(1000, 16, 100_000);
        req.hot_percentage = 1.0;
        req.levels = 1;
        assert!(matches!(BudgetPlan::plan(&req), Err(StoreError::BudgetTooSmall(_))));
        req.shared_min_rows = 1;
        let plan = BudgetPlan::plan(&req).unwrap();
        assert_eq!(plan.shared_rows, vec![1]);
        assert!(plan.allocated_bytes() <= 100_000);
    }

    #[test]
    fn uncompressed_budget_is_representable() {
        let n = 1000;
        let req = BudgetRequest::new(n, 16, n * 16 * 8);
        let plan = BudgetPlan::plan(&req).unwrap();
        assert!(plan.compression_ratio() >= 1.0);
        let dense = BudgetPlan::uncompressed(n, 16, 8).unwrap();
        assert_eq!(dense.compression_ratio(), 1.0);
    }

    #[test]
    fn tiny_budget_rejected() {
        assert!(matches!(BudgetPlan::plan(&BudgetRequest::new(1000, 16, 100)), Err(StoreError::BudgetTooSmall(_))));
        assert!(matches!(BudgetPlan::hash_only(1000, 16, 100, 8), Err(StoreError::BudgetTooSmall(_))));
    }

    #[test]
    fn bad_split_rejected() {
        let mut req = BudgetRequest::new(1000, 16, 100_000);
        req.level_split = vec![0.5];
        assert!(matches!(BudgetPlan::plan(&req), Err(StoreError::InvalidBudget(_))));
        req.level_split = vec![0.6, 0.6];
        assert!(matches!(BudgetPlan::plan(&req), Err(StoreError::InvalidBudget(_))));
        req.level_split = vec![0.25, 0.75];
        let plan = BudgetPlan::plan(&req).unwrap();
        assert!(plan.shared_rows[1] > 2 * plan.shared_rows[0]);
    }

    #[test]
    fn resolve_shapes() {
        let store = EmbeddingStore::new(tiered_plan(), 3).unwrap();
        let f = FeatureId(123);
        let cold = store.resolve(f, FeatureClass::Cold, None).unwrap();
        assert_eq!(cold.rows, vec![(TableRef::Shared(0), store.shared_row(0, f))]);
        let medium = store.resolve(f, FeatureClass::Medium, None).unwrap();
        assert_eq!(medium.rows.len(), 2);
        assert_eq!(medium.level0_row(), cold.level0_row());
        assert_eq!(medium.rows[1].0, TableRef::Shared(1));
        let hot = store.resolve(f, FeatureClass::Hot, Some(7)).unwrap();
        assert_eq!(hot.rows, vec![(TableRef::Unique, 7)]);
        assert_eq!(store.resolve(f, FeatureClass::Hot, None), Err(StoreError::HandleMissing(f)));
    }

    #[test]
    fn features_outside_domain_still_resolve() {
        let store = EmbeddingStore::new(tiered_plan(), 3).unwrap();
        let r = store.resolve(FeatureId(1 << 40), FeatureClass::Medium, None).unwrap();
        for (t, row) in r.rows {
            let TableRef::Shared(l) = t else { panic!() };
            assert!(row < store.plan().shared_rows[l as usize]);
        }
    }

    fn hot_sketch(plan: &BudgetPlan) -> HotSketch {
        HotSketch::new(SketchConfig::new(plan.hot_rows).with_thresholds(10.0, 1.0)).unwrap()
    }

    #[test]
    fn promotion_copies_pooled_embedding() {
        let plan = tiered_plan();
        let mut store = EmbeddingStore::new(plan.clone(), 5).unwrap();
        let mut sketch = hot_sketch(&plan);
        let f = FeatureId(42);
        sketch.insert(f, 20.0).unwrap();
        let q = sketch.query(f);
        let before = store.lookup(&store.resolve(f, q.lookup_class(), q.handle).unwrap());
        let ev = store.promote(&mut sketch, f).unwrap();
        assert_eq!(ev.direction, MigrationDirection::Promote);
        let q = sketch.query(f);
        assert_eq!(q.handle, Some(ev.unique_row));
        let after = store.lookup(&store.resolve(f, q.lookup_class(), q.handle).unwrap());
        assert_eq!(before, after);
        assert_eq!(store.promote(&mut sketch, f), Err(StoreError::AlreadyHot(f)));
        store.check_consistency(&sketch).unwrap();
    }

    #[test]
    fn promotion_requires_free_row_and_hot_class() {
        let plan = BudgetPlan::plan(&BudgetRequest::new(1000, 4, 300)).unwrap();
        assert_eq!(plan.hot_rows, 1);
        let mut store = EmbeddingStore::new(plan.clone(), 0).unwrap();
        let mut sketch = HotSketch::new(SketchConfig::new(4).with_thresholds(10.0, 1.0)).unwrap();
        sketch.insert(FeatureId(1), 20.0).unwrap();
        sketch.insert(FeatureId(2), 20.0).unwrap();
        sketch.insert(FeatureId(3), 5.0).unwrap();
        assert_eq!(store.promote(&mut sketch, FeatureId(3)), Err(StoreError::NotHot(FeatureId(3))));
        store.promote(&mut sketch, FeatureId(1)).unwrap();
        assert_eq!(store.promote(&mut sketch, FeatureId(2)), Err(StoreError::NoFreeRow));
        assert_eq!(sketch.query(FeatureId(2)).handle, None);
        store.check_consistency(&sketch).unwrap();
    }

    #[test]
    fn demotion_discards_unique_row() {
        let plan = tiered_plan();
        let mut store = EmbeddingStore::new(plan.clone(), 5).unwrap();
        let mut sketch = hot_sketch(&plan);
        let f = FeatureId(42);
        sketch.insert(f, 20.0).unwrap();
        let cold_before = store.lookup(&store.resolve(f, FeatureClass::Cold, None).unwrap());
        let ev = store.promote(&mut sketch, f).unwrap();
        store.row_mut(TableRef::Unique, ev.unique_row as usize).fill(9.0);
        store.demote(&mut sketch, f).unwrap();
        let cold_after = store.lookup(&store.resolve(f, FeatureClass::Cold, None).unwrap());
        assert_eq!(cold_before, cold_after);
        // re-promotion initializes from shared rows, not the discarded row
        let ev = store.promote(&mut sketch, f).unwrap();
        let medium = store.lookup(&store.resolve(f, FeatureClass::Medium, None).unwrap());
        assert_eq!(store.row(TableRef::Unique, ev.unique_row as usize), &medium[..]);
        assert_eq!(store.demote(&mut sketch, FeatureId(99)), Err(StoreError::HandleMissing(FeatureId(99))));
        store.check_consistency(&sketch).unwrap();
    }

    #[test]
    fn release_after_eviction() {
        let plan = tiered_plan();
        let mut store = EmbeddingStore::new(plan, 1).unwrap();
        let mut sketch = HotSketch::new(SketchConfig::new(1).with_slots(1).with_thresholds(1.0, 0.5)).unwrap();
        sketch.insert(FeatureId(1), 2.0).unwrap();
        let ev = store.promote(&mut sketch, FeatureId(1)).unwrap();
        let free = store.free_rows();
        let outcome = sketch.insert(FeatureId(2), 0.0).unwrap();
        let crate::SlotOutcome::Evicted { victim, released: Some(h) } = outcome else { panic!("{outcome:?}") };
        assert_eq!(h, ev.unique_row);
        store.release(victim, h).unwrap();
        assert_eq!(store.free_rows(), free + 1);
        assert!(store.release(victim, h).is_err());
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let plan = tiered_plan();
        let a = EmbeddingStore::new(plan.clone(), 1).unwrap();
        let b = EmbeddingStore::new(plan.clone(), 1).unwrap();
        let c = EmbeddingStore::new(plan, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.row(TableRef::Shared(0), 0), c.row(TableRef::Shared(0), 0));
        let bound = 0.25;
        assert!(a.levels.iter().all(|t| t.data.iter().all(|v| v.abs() <= bound)));
    }

    #[test]
    fn snapshot_roundtrip_and_errors() {
        let plan = tiered_plan();
        let mut store = EmbeddingStore::new(plan.clone(), 5).unwrap();
        let mut sketch = hot_sketch(&plan);
        sketch.insert(FeatureId(4), 20.0).unwrap();
        store.promote(&mut sketch, FeatureId(4)).unwrap();
        let bytes = store.snapshot();
        let back = EmbeddingStore::restore(&bytes).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.snapshot(), bytes);
        assert_eq!(EmbeddingStore::restore(b"HSK1...."), Err(StoreError::VersionMismatch));
        assert!(matches!(EmbeddingStore::restore(&bytes[..bytes.len() - 1]), Err(StoreError::CorruptState(_))));
    }
}
