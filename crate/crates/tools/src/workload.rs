use std::ops::Range;

/// Counters at or above this value are reserved for probe keys.
pub const PROBE_OFFSET: u64 = 1 << 62;

/// A seeded bijection on `u64`, applied to counters to produce keys.
///
/// Distinct counters give distinct keys, so keys drawn from counters at or
/// above [`PROBE_OFFSET`] are never among the inserted keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyStream {
    seed: u64,
}

impl KeyStream {
    pub fn new(seed: u64) -> Self {
        KeyStream {
            seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03,
        }
    }

    /// The `i`-th key. The map is a xor with the seed followed by the
    /// splitmix64 finalizer; every step is invertible.
    #[inline]
    pub fn key(&self, i: u64) -> u64 {
        let mut x = i ^ self.seed;
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^ (x >> 31)
    }

    pub fn keys(&self, range: Range<u64>) -> impl Iterator<Item = u64> + '_ {
        range.map(move |i| self.key(i))
    }

    /// The `i`-th probe key, never produced by [`key`](Self::key) for
    /// `i < PROBE_OFFSET`.
    #[inline]
    pub fn probe(&self, i: u64) -> u64 {
        self.key(PROBE_OFFSET + i)
    }
}

/// Splits `0..total` into `parts` contiguous ranges of nearly equal size.
pub fn split_range(total: u64, parts: usize) -> Vec<Range<u64>> {
    let parts = parts.max(1) as u64;
    (0..parts)
        .map(|t| (total * t / parts)..(total * (t + 1) / parts))
        .collect()
}
