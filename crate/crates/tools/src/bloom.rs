//! Bloom filter baseline sized to match a quotient filter.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use qf_core::{Key, Xxh64Hasher};

use crate::stats::bloom_fpr;

pub const DEFAULT_HASHES: u32 = 4;

/// A Bloom filter over `u64` words. Bits are only ever set, with `fetch_or`,
/// so inserts and queries are safe from any number of threads.
pub struct BloomFilter {
    words: Vec<AtomicU64>,
    bits: u64,
    hashes: u32,
    seed: u64,
    len: AtomicUsize,
}

impl BloomFilter {
    pub fn new(bits: u64, hashes: u32, seed: u64) -> Self {
        assert!(bits > 0 && hashes > 0);
        BloomFilter {
            words: (0..bits.div_ceil(64)).map(|_| AtomicU64::new(0)).collect(),
            bits,
            hashes,
            seed,
            len: AtomicUsize::new(0),
        }
    }

    /// Same memory as a quotient filter with `slots` slots of `r` remainder
    /// bits and three status bits, with four hash functions.
    pub fn same_memory_as(slots: usize, remainder_bits: u32, seed: u64) -> Self {
        Self::new(slots as u64 * (remainder_bits as u64 + 3), DEFAULT_HASHES, seed)
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn hashes(&self) -> u32 {
        self.hashes
    }

    pub fn len(&self) -> usize {
        self.len.load(Ordering::Relaxed)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Double hashing: position `i` is `h1 + i * h2` modulo the bit count.
    fn positions<K: Key + ?Sized>(&self, key: &K) -> impl Iterator<Item = u64> + '_ {
        let h1 = key.hash_key(&Xxh64Hasher, self.seed);
        let h2 = key.hash_key(&Xxh64Hasher, self.seed ^ 0x5851_F42D_4C95_7F2D) | 1;
        (0..self.hashes as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % self.bits)
    }

    pub fn insert<K: Key + ?Sized>(&self, key: &K) {
        for p in self.positions(key) {
            self.words[(p / 64) as usize].fetch_or(1 << (p % 64), Ordering::Relaxed);
        }
        self.len.fetch_add(1, Ordering::Relaxed);
    }

    pub fn contains<K: Key + ?Sized>(&self, key: &K) -> bool {
        self.positions(key)
            .all(|p| self.words[(p / 64) as usize].load(Ordering::Relaxed) & (1 << (p % 64)) != 0)
    }

    /// `(1 - e^(-h n / M))^h` for the current element count.
    pub fn expected_fpr(&self) -> f64 {
        bloom_fpr(self.len(), self.bits, self.hashes)
    }
}

impl std::fmt::Debug for BloomFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BloomFilter")
            .field("bits", &self.bits)
            .field("hashes", &self.hashes)
            .field("len", &self.len())
            .finish()
    }
}
