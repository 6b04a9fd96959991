//! Seeded integer hashing.
//!
//! Two primitives: [`mix64`], a bijective 64-bit finalizer used for bucket
//! selection, and [`DomainPermutation`], a keyed permutation of `[0, n)`
//! used for shared-table row selection so that a table with `n` rows over a
//! universe of `n` features is collision free.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer. Bijective on `u64`.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hash of `value` under `seed`.
#[inline]
pub fn seeded(value: u64, seed: u64) -> u64 {
    mix64(value ^ mix64(seed.wrapping_add(GOLDEN)))
}

/// Maps a 64-bit hash uniformly onto `[0, range)` without division.
#[inline]
pub fn reduce(hash: u64, range: usize) -> usize {
    ((hash as u128 * range as u128) >> 64) as usize
}

/// Derives an independent sub-seed, e.g. one per table level.
#[inline]
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_mul(GOLDEN).wrapping_add(1)))
}

const FEISTEL_ROUNDS: usize = 4;

/// Keyed pseudorandom permutation of `[0, domain)`.
///
/// Balanced Feistel network over the smallest even bit width covering the
/// domain, with cycle walking to stay inside it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainPermutation {
    domain: u64,
    half_bits: u32,
    keys: [u64; FEISTEL_ROUNDS],
}

impl DomainPermutation {
    pub fn new(domain: u64, seed: u64) -> Self {
        assert!(domain > 0, "permutation domain must be non-empty");
        let bits = (64 - (domain - 1).leading_zeros()).max(2);
        let half_bits = bits.div_ceil(2);
        let mut keys = [0u64; FEISTEL_ROUNDS];
        for (round, key) in keys.iter_mut().enumerate() {
            *key = derive_seed(seed, round as u64);
        }
        Self { domain, half_bits, keys }
    }

    pub fn domain(&self) -> u64 {
        self.domain
    }

    #[inline]
    fn round_trip(&self, x: u64) -> u64 {
        let mask = (1u64 << self.half_bits) - 1;
        let mut left = x >> self.half_bits;
        let mut right = x & mask;
        for key in &self.keys {
            let next = left ^ (mix64(right ^ key) & mask);
            left = right;
            right = next;
        }
        (left << self.half_bits) | right
    }

    /// Image of `x`. Requires `x < domain`.
    #[inline]
    pub fn apply(&self, x: u64) -> u64 {
        debug_assert!(x < self.domain);
        let mut y = self.round_trip(x);
        while y >= self.domain {
            y = self.round_trip(y);
        }
        y
    }
}
