//! Keys, hashing and the quotient/remainder split.
//!
//! A fingerprint is the low `k = q + r` bits of a seeded 64-bit hash. The
//! top `q` bits address the canonical slot and the low `r` bits are stored.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Largest supported quotient width; keeps slot counts addressable.
pub const MAX_QUOTIENT_BITS: u32 = 40;

/// Number of seeds tried before a nonzero remainder is declared unreachable.
pub const NONZERO_ATTEMPTS: u64 = 64;

/// A seedable 64-bit hash over byte strings.
pub trait KeyHasher {
    fn hash_bytes(&self, bytes: &[u8], seed: u64) -> u64;
}

/// The default hasher: XXH64.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Xxh64Hasher;

impl KeyHasher for Xxh64Hasher {
    #[inline]
    fn hash_bytes(&self, bytes: &[u8], seed: u64) -> u64 {
        xxhash_rust::xxh64::xxh64(bytes, seed)
    }
}

/// Anything that can be hashed into a fingerprint.
///
/// Integers hash through their fixed-width little-endian encoding so that
/// results are identical across platforms and runs.
pub trait Key {
    fn hash_key<H: KeyHasher + ?Sized>(&self, hasher: &H, seed: u64) -> u64;
}

impl Key for [u8] {
    fn hash_key<H: KeyHasher + ?Sized>(&self, hasher: &H, seed: u64) -> u64 {
        hasher.hash_bytes(self, seed)
    }
}

impl<const N: usize> Key for [u8; N] {
    fn hash_key<H: KeyHasher + ?Sized>(&self, hasher: &H, seed: u64) -> u64 {
        hasher.hash_bytes(self, seed)
    }
}

impl Key for str {
    fn hash_key<H: KeyHasher + ?Sized>(&self, hasher: &H, seed: u64) -> u64 {
        hasher.hash_bytes(self.as_bytes(), seed)
    }
}

impl Key for String {
    fn hash_key<H: KeyHasher + ?Sized>(&self, hasher: &H, seed: u64) -> u64 {
        hasher.hash_bytes(self.as_bytes(), seed)
    }
}

impl Key for Vec<u8> {
    fn hash_key<H: KeyHasher + ?Sized>(&self, hasher: &H, seed: u64) -> u64 {
        hasher.hash_bytes(self, seed)
    }
}

macro_rules! int_key {
    ($($t:ty),*) => {$(
        impl Key for $t {
            fn hash_key<H: KeyHasher + ?Sized>(&self, hasher: &H, seed: u64) -> u64 {
                hasher.hash_bytes(&self.to_le_bytes(), seed)
            }
        }
    )*};
}

int_key!(u32, u64, u128, i32, i64);

impl Key for usize {
    fn hash_key<H: KeyHasher + ?Sized>(&self, hasher: &H, seed: u64) -> u64 {
        (*self as u64).hash_key(hasher, seed)
    }
}

impl<T: Key + ?Sized> Key for &T {
    fn hash_key<H: KeyHasher + ?Sized>(&self, hasher: &H, seed: u64) -> u64 {
        (**self).hash_key(hasher, seed)
    }
}

/// Bit widths and hashing parameters shared by every filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterParams {
    q: u32,
    r: u32,
    seed: u64,
    require_nonzero_remainder: bool,
}

impl FilterParams {
    pub fn new(quotient_bits: u32, remainder_bits: u32) -> Result<Self> {
        if quotient_bits == 0 {
            return Err(Error::InvalidParams("quotient bits must be at least 1"));
        }
        if remainder_bits == 0 {
            return Err(Error::InvalidParams("remainder bits must be at least 1"));
        }
        if quotient_bits > MAX_QUOTIENT_BITS {
            return Err(Error::InvalidParams("quotient bits too large"));
        }
        if quotient_bits + remainder_bits > 64 {
            return Err(Error::InvalidParams("fingerprint longer than 64 bits"));
        }
        Ok(FilterParams {
            q: quotient_bits,
            r: remainder_bits,
            seed: 0,
            require_nonzero_remainder: false,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_nonzero_remainder(mut self, on: bool) -> Self {
        self.require_nonzero_remainder = on;
        self
    }

    #[inline]
    pub fn quotient_bits(&self) -> u32 {
        self.q
    }

    #[inline]
    pub fn remainder_bits(&self) -> u32 {
        self.r
    }

    /// Fingerprint width `q + r`.
    #[inline]
    pub fn fingerprint_bits(&self) -> u32 {
        self.q + self.r
    }

    /// Canonical slot count `2^q`.
    #[inline]
    pub fn slots(&self) -> usize {
        1usize << self.q
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn requires_nonzero_remainder(&self) -> bool {
        self.require_nonzero_remainder
    }

    /// Parameters after one bounded-growing step: one bit moves from the
    /// remainder into the quotient.
    pub fn grown(&self) -> Result<Self> {
        if self.r < 2 {
            return Err(Error::RemainderExhausted);
        }
        if self.q + 1 > MAX_QUOTIENT_BITS {
            return Err(Error::InvalidParams("quotient bits too large"));
        }
        Ok(FilterParams {
            q: self.q + 1,
            r: self.r - 1,
            ..*self
        })
    }

    #[inline]
    pub(crate) fn fingerprint_mask(&self) -> u64 {
        low_mask(self.q + self.r)
    }

    #[inline]
    pub(crate) fn remainder_mask(&self) -> u64 {
        low_mask(self.r)
    }
}

#[inline]
pub(crate) fn low_mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// `2^e` for integer exponents in the normal `f64` range.
pub(crate) fn pow2(e: i32) -> f64 {
    assert!((-1022..=1023).contains(&e));
    f64::from_bits(((1023 + e) as u64) << 52)
}

/// A fingerprint split into its canonical slot and its stored remainder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fingerprint {
    pub quotient: u64,
    pub remainder: u64,
}

impl Fingerprint {
    /// Splits the low `k` bits of `hash`.
    #[inline]
    pub fn from_hash(hash: u64, params: &FilterParams) -> Self {
        Self::from_value(hash & params.fingerprint_mask(), params)
    }

    /// Splits a `k`-bit fingerprint value; higher bits are ignored.
    #[inline]
    pub fn from_value(value: u64, params: &FilterParams) -> Self {
        let value = value & params.fingerprint_mask();
        Fingerprint {
            quotient: if params.r >= 64 { 0 } else { value >> params.r },
            remainder: value & params.remainder_mask(),
        }
    }

    /// Reassembles the `k`-bit value `quotient * 2^r + remainder`.
    #[inline]
    pub fn value(&self, params: &FilterParams) -> u64 {
        (self.quotient << params.r) | self.remainder
    }
}

pub fn make_fingerprint<K: Key + ?Sized>(key: &K, params: &FilterParams) -> Fingerprint {
    make_fingerprint_with(&Xxh64Hasher, key, params)
}

pub fn make_fingerprint_with<H: KeyHasher + ?Sized, K: Key + ?Sized>(
    hasher: &H,
    key: &K,
    params: &FilterParams,
) -> Fingerprint {
    Fingerprint::from_hash(key.hash_key(hasher, params.seed), params)
}

/// Fingerprint whose remainder is never zero, found by rehashing with
/// `seed + 1`, `seed + 2`, ... until the remainder is nonzero.
///
/// Panics if [`NONZERO_ATTEMPTS`] consecutive hashes all have a zero
/// remainder, which happens with probability `2^(-64 r)`.
pub fn make_nonzero_fingerprint<K: Key + ?Sized>(key: &K, params: &FilterParams) -> Fingerprint {
    make_nonzero_fingerprint_with(&Xxh64Hasher, key, params)
}

pub fn make_nonzero_fingerprint_with<H: KeyHasher + ?Sized, K: Key + ?Sized>(
    hasher: &H,
    key: &K,
    params: &FilterParams,
) -> Fingerprint {
    debug_assert!(params.require_nonzero_remainder);
    for attempt in 0..NONZERO_ATTEMPTS {
        let h = key.hash_key(hasher, params.seed.wrapping_add(attempt));
        let fp = Fingerprint::from_hash(h, params);
        if fp.remainder != 0 {
            return fp;
        }
    }
    panic!("no nonzero remainder after {NONZERO_ATTEMPTS} rehashes");
}

/// Fingerprint for `params`, honoring its nonzero-remainder flag.
pub fn fingerprint_for<K: Key + ?Sized>(key: &K, params: &FilterParams) -> Fingerprint {
    if params.require_nonzero_remainder {
        make_nonzero_fingerprint(key, params)
    } else {
        make_fingerprint(key, params)
    }
}

/// Re-splits the fingerprint stored at canonical slot `slot_index` with
/// `remainder` after one growing step (`q + 1`, `r - 1`).
pub fn rebase_fingerprint(
    slot_index: u64,
    remainder: u64,
    old: &FilterParams,
    new: &FilterParams,
) -> Result<Fingerprint> {
    if new.q != old.q + 1 || new.r + 1 != old.r {
        return Err(Error::InvalidParams("rebase needs (q + 1, r - 1)"));
    }
    if slot_index >= old.slots() as u64 || remainder > old.remainder_mask() {
        return Err(Error::InvalidParams("fingerprint outside old parameters"));
    }
    let top = remainder >> new.r;
    Ok(Fingerprint {
        quotient: (slot_index << 1) | top,
        remainder: remainder & new.remainder_mask(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(q: u32, r: u32) -> FilterParams {
        FilterParams::new(q, r).unwrap()
    }

    /// Returns a scripted hash per seed so rehash behaviour is observable.
    struct Scripted(&'static [u64]);

    impl KeyHasher for Scripted {
        fn hash_bytes(&self, _bytes: &[u8], seed: u64) -> u64 {
            self.0[seed as usize]
        }
    }

    #[test]
    fn split_of_explicit_bits() {
        let p = params(3, 5);
        let fp = Fingerprint::from_hash(0b1011_0101, &p);
        assert_eq!(fp, Fingerprint { quotient: 5, remainder: 21 });
        assert_eq!(Fingerprint::from_hash(0, &p), Fingerprint { quotient: 0, remainder: 0 });
        // bits above k are dropped
        assert_eq!(Fingerprint::from_hash(0xff00 | 0b1011_0101, &p).quotient, 5);
    }

    #[test]
    fn params_validation() {
        assert!(FilterParams::new(0, 4).is_err());
        assert!(FilterParams::new(4, 0).is_err());
        assert!(FilterParams::new(30, 35).is_err());
        assert_eq!(params(16, 8).fingerprint_bits(), 24);
        assert_eq!(params(16, 8).slots(), 65536);
        assert_eq!(params(3, 1).grown(), Err(Error::RemainderExhausted));
        assert_eq!(params(3, 5).grown().unwrap(), params(4, 4));
    }

    #[test]
    fn nonzero_rehash_only_when_needed() {
        let p = params(3, 5).with_nonzero_remainder(true);
        // first hash has remainder 0, second has remainder 3
        let h = Scripted(&[0b010_00000, 0b110_00011]);
        let fp = make_nonzero_fingerprint_with(&h, &1u64, &p);
        assert_eq!(fp, Fingerprint { quotient: 6, remainder: 3 });
        let h = Scripted(&[0b001_00111, 0]);
        let fp = make_nonzero_fingerprint_with(&h, &1u64, &p);
        assert_eq!(fp, Fingerprint { quotient: 1, remainder: 7 });
    }

    #[test]
    #[should_panic]
    fn nonzero_rehash_cap() {
        static ZEROS: [u64; 64] = [0; 64];
        let p = params(3, 5).with_nonzero_remainder(true);
        make_nonzero_fingerprint_with(&Scripted(&ZEROS), &1u64, &p);
    }

    #[test]
    fn nonzero_mode_never_emits_zero() {
        let p = params(8, 5).with_nonzero_remainder(true).with_seed(11);
        for key in 0..1_000_000u64 {
            assert_ne!(make_nonzero_fingerprint(&key, &p).remainder, 0);
        }
    }

    #[test]
    fn rebase_examples() {
        let old = params(3, 5);
        let new = old.grown().unwrap();
        assert_eq!(
            rebase_fingerprint(5, 0b10101, &old, &new).unwrap(),
            Fingerprint { quotient: 11, remainder: 5 }
        );
        assert_eq!(
            rebase_fingerprint(0, 0, &old, &new).unwrap(),
            Fingerprint { quotient: 0, remainder: 0 }
        );
        assert!(rebase_fingerprint(5, 1, &old, &old).is_err());
    }

    #[test]
    fn integer_keys_hash_little_endian() {
        let h = Xxh64Hasher;
        assert_eq!(7u64.hash_key(&h, 3), h.hash_bytes(&7u64.to_le_bytes(), 3));
        assert_eq!(7usize.hash_key(&h, 3), 7u64.hash_key(&h, 3));
        assert_eq!("ab".hash_key(&h, 0), b"ab".hash_key(&h, 0));
    }

    #[test]
    fn quotients_are_uniform() {
        // chi-square against uniform over 256 buckets, plus a per-bucket 4 sigma check
        let p = params(8, 8).with_seed(0x5eed);
        let mut counts = [0u32; 256];
        let n = 10_000u64;
        for key in 0..n {
            counts[make_fingerprint(&key, &p).quotient as usize] += 1;
        }
        let expected = n as f64 / 256.0;
        let sigma = (n as f64 * (1.0 / 256.0) * (255.0 / 256.0)).sqrt();
        let mut chi2 = 0.0;
        for &c in &counts {
            let d = c as f64 - expected;
            assert!(d.abs() <= 4.0 * sigma, "bucket count {c} vs {expected}");
            chi2 += d * d / expected;
        }
        // 255 degrees of freedom; 99.9th percentile is about 330
        assert!(chi2 < 330.0, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn split_round_trip(hash: u64, q in 1u32..=20, r in 1u32..=40) {
            let p = params(q, r);
            let fp = Fingerprint::from_hash(hash, &p);
            prop_assert!(fp.quotient < p.slots() as u64);
            prop_assert_eq!(fp.value(&p), hash & low_mask(q + r));
        }

        #[test]
        fn rebase_preserves_value(hash: u64, q in 1u32..=20, r in 2u32..=40) {
            let old = params(q, r);
            let new = old.grown().unwrap();
            let fp = Fingerprint::from_hash(hash, &old);
            let re = rebase_fingerprint(fp.quotient, fp.remainder, &old, &new).unwrap();
            prop_assert_eq!(re.value(&new), fp.value(&old));
            prop_assert_eq!(re, Fingerprint::from_value(fp.value(&old), &new));
        }
    }
}
