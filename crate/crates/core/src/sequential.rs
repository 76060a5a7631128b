//! Single-threaded quotient filter.
//!
//! Remainders with the same quotient form a sorted run; runs are stored in
//! quotient order, so the table contents depend only on the multiset of
//! inserted fingerprints, never on insertion order. The table is not a
//! ring: elements near the end spill into a fixed overflow area.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fingerprint::{fingerprint_for, pow2, rebase_fingerprint, FilterParams, Fingerprint, Key};
use crate::qtable::{Appender, QTable, Scheme};
use crate::status::{READ_LOCK, WRITE_LOCK};
use crate::storage::SlotLayout;

pub use crate::qtable::OVERFLOW_SLOTS;

/// Fill degree at which inserts are refused.
pub const FILL_CAP: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// occupied / continuation / shifted per slot
    ThreeBit,
    /// occupied / new-run per slot; remainders are never zero
    TwoBit,
}

impl Variant {
    pub(crate) fn scheme(self) -> Scheme {
        match self {
            Variant::ThreeBit => Scheme::ThreeBit,
            Variant::TwoBit => Scheme::TwoBit,
        }
    }
}

/// Slot range of one run and the start of the cluster containing it.
///
/// For the two-bit variant `cluster_start` is the supercluster start, the
/// only boundary that layout can detect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunLocation {
    pub run_start: usize,
    pub run_end: usize,
    pub cluster_start: usize,
}

pub struct QuotientFilter {
    qt: QTable,
    len: usize,
    variant: Variant,
}

impl QuotientFilter {
    /// Creates an empty filter. The two-bit variant always uses nonzero
    /// remainders, whatever `params` says.
    pub fn new(params: FilterParams, variant: Variant) -> Result<Self> {
        let params = match variant {
            Variant::ThreeBit => params,
            Variant::TwoBit => params.with_nonzero_remainder(true),
        };
        Ok(QuotientFilter {
            qt: QTable::new(params, variant.scheme())?,
            len: 0,
            variant,
        })
    }

    /// Restores a filter from its parameters, element count and group words.
    pub fn from_raw_parts(params: FilterParams, variant: Variant, len: usize, words: &[u64]) -> Result<Self> {
        let params = match variant {
            Variant::ThreeBit => params,
            Variant::TwoBit => params.with_nonzero_remainder(true),
        };
        let filter = QuotientFilter {
            qt: QTable::from_words(params, variant.scheme(), words)?,
            len,
            variant,
        };
        filter.check_invariants().map_err(Error::Corrupt)?;
        Ok(filter)
    }

    pub fn params(&self) -> &FilterParams {
        &self.qt.params
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn layout(&self) -> &SlotLayout {
        self.qt.table.layout()
    }

    /// Number of stored fingerprints, duplicates included.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Canonical slot count `m`.
    pub fn capacity(&self) -> usize {
        self.qt.params.slots()
    }

    pub fn fill_degree(&self) -> f64 {
        self.len as f64 / self.capacity() as f64
    }

    pub fn fingerprint<K: Key + ?Sized>(&self, key: &K) -> Fingerprint {
        fingerprint_for(key, &self.qt.params)
    }

    pub fn insert<K: Key + ?Sized>(&mut self, key: &K) -> Result<()> {
        let fp = self.fingerprint(key);
        self.insert_fingerprint(fp)
    }

    pub fn contains<K: Key + ?Sized>(&self, key: &K) -> bool {
        self.contains_fingerprint(self.fingerprint(key))
    }

    pub fn insert_fingerprint(&mut self, fp: Fingerprint) -> Result<()> {
        self.validate(&fp)?;
        if (self.len + 1) as f64 > FILL_CAP * self.capacity() as f64 {
            return Err(Error::TableFull);
        }
        self.qt.insert_sequential(fp.quotient as usize, fp.remainder)?;
        self.len += 1;
        Ok(())
    }

    pub fn contains_fingerprint(&self, fp: Fingerprint) -> bool {
        if self.validate(&fp).is_err() {
            return false;
        }
        self.qt.query_unlocked(fp.quotient as usize, fp.remainder)
    }

    fn validate(&self, fp: &Fingerprint) -> Result<()> {
        let p = &self.qt.params;
        if fp.quotient >= p.slots() as u64 || fp.remainder > p.remainder_mask() {
            return Err(Error::InvalidParams("fingerprint does not match filter parameters"));
        }
        if self.variant == Variant::TwoBit && fp.remainder == 0 {
            return Err(Error::InvalidParams("two-bit variant needs a nonzero remainder"));
        }
        Ok(())
    }

    /// The run of `quotient`, or `None` if nothing with that quotient was
    /// inserted.
    pub fn find_run(&self, quotient: u64) -> Option<RunLocation> {
        let c = quotient as usize;
        if c >= self.capacity() || !self.qt.scheme.occupied(self.qt.get(c)) {
            return None;
        }
        let cluster_start = self.qt.cluster_start(c);
        let run_start = self.qt.locate_run(cluster_start, c, false);
        Some(RunLocation {
            run_start,
            run_end: self.qt.run_end(run_start),
            cluster_start,
        })
    }

    /// Bounded growing: a table with twice the slots and one remainder bit
    /// less. The fingerprint width, and hence the false positive rate at a
    /// given element count, is unchanged.
    pub fn grow(&self) -> Result<QuotientFilter> {
        if self.variant == Variant::TwoBit {
            // moving the top remainder bit out could leave a zero remainder
            return Err(Error::Unsupported("bounded growing of the two-bit variant"));
        }
        let old = self.qt.params;
        let new = old.grown()?;
        let target = QTable::new(new, self.qt.scheme)?;
        let mut appender = Appender::new();
        let mut result = Ok(());
        self.qt.decode_superclusters(0, self.qt.slots(), |_, quotient, rem| {
            if result.is_err() {
                return;
            }
            result = rebase_fingerprint(quotient as u64, rem, &old, &new)
                .and_then(|fp| appender.push(&target, fp.quotient as usize, fp.remainder).map(|_| ()));
        });
        result?;
        Ok(QuotientFilter {
            qt: target,
            len: self.len,
            variant: self.variant,
        })
    }

    /// Expected false positive rate for the current element count:
    /// `n * 2^-k` for the three-bit layout and `n * 2^-q / (2^r - 1)` for the
    /// two-bit layout, whose remainders avoid zero.
    pub fn fpr_estimate(&self) -> f64 {
        let p = &self.qt.params;
        let n = self.len as f64;
        match self.variant {
            Variant::ThreeBit => n * pow2(-(p.fingerprint_bits() as i32)),
            Variant::TwoBit => n / p.slots() as f64 / (pow2(p.remainder_bits() as i32) - 1.0),
        }
    }

    /// The two-bit estimate written as `n/m * (2^r - 1)`. It exceeds one for
    /// realistic `r`, so [`fpr_estimate`](Self::fpr_estimate) is the usable
    /// form; this one is kept for comparison only.
    pub fn fpr_estimate_literal(&self) -> f64 {
        let p = &self.qt.params;
        self.len as f64 / p.slots() as f64 * (pow2(p.remainder_bits() as i32) - 1.0)
    }

    /// Every stored fingerprint in table order (ascending fingerprint value).
    pub fn fingerprints(&self) -> Vec<Fingerprint> {
        let mut out = Vec::with_capacity(self.len);
        self.qt.decode_superclusters(0, self.qt.slots(), |_, quotient, remainder| {
            out.push(Fingerprint {
                quotient: quotient as u64,
                remainder,
            })
        });
        out
    }

    /// Raw slot code at index `i` (status in the low bits).
    pub fn slot_code(&self, i: usize) -> u64 {
        self.qt.get(i)
    }

    /// Addressable slots including the overflow area.
    pub fn total_slots(&self) -> usize {
        self.qt.slots()
    }

    /// Copy of the group words, padding included.
    pub fn words(&self) -> Vec<u64> {
        self.qt.table.snapshot()
    }

    /// Checks status-bit legality, run ordering and the element count.
    pub fn check_invariants(&self) -> core::result::Result<(), &'static str> {
        check_table(&self.qt, Some(self.len))
    }
}

impl core::fmt::Debug for QuotientFilter {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("QuotientFilter")
            .field("params", &self.qt.params)
            .field("variant", &self.variant)
            .field("len", &self.len)
            .finish()
    }
}

/// Shared structural check for quiescent tables.
pub(crate) fn check_table(qt: &QTable, expected_len: Option<usize>) -> core::result::Result<(), &'static str> {
    let scheme = qt.scheme;
    let layout = qt.table.layout();
    let mut count = 0usize;
    let mut prev: Option<(usize, usize, u64)> = None;
    let mut bad: Option<&'static str> = None;
    for i in 0..qt.slots() {
        let code = qt.get(i);
        if scheme == Scheme::ThreeBit {
            let s = layout.status_of(code);
            if s == READ_LOCK || s == WRITE_LOCK {
                return Err("lock code in a quiescent table");
            }
        }
        if !scheme.has_content(code) && code != 0 {
            return Err("empty slot with stray bits");
        }
    }
    // walk superclusters with a fresh occupied queue, checking each element
    let mut pending = alloc::collections::VecDeque::new();
    let mut current: Option<usize> = None;
    for i in 0..qt.slots() {
        let code = qt.get(i);
        if !scheme.has_content(code) {
            if !pending.is_empty() {
                return Err("occupied slot without a run");
            }
            current = None;
            prev = None;
            continue;
        }
        if scheme.occupied(code) {
            pending.push_back(i);
        }
        if scheme.run_start(code) {
            current = pending.pop_front();
        }
        let Some(q) = current else {
            return Err("run start without an occupied slot");
        };
        if q > i {
            bad = bad.or(Some("element stored left of its canonical slot"));
        }
        if scheme == Scheme::ThreeBit {
            let shifted = scheme.shifted(code);
            if shifted != (q != i) {
                bad = bad.or(Some("shifted bit disagrees with position"));
            }
            if scheme.continuation(code) && !shifted {
                bad = bad.or(Some("continuation without shift"));
            }
        } else if qt.remainder(code) == 0 {
            bad = bad.or(Some("zero remainder in two-bit table"));
        }
        let rem = qt.remainder(code);
        if let Some((pq, _, prem)) = prev {
            if pq == q && prem > rem {
                bad = bad.or(Some("run not sorted"));
            }
            if pq > q {
                bad = bad.or(Some("runs out of quotient order"));
            }
        }
        prev = Some((q, i, rem));
        count += 1;
    }
    if let Some(msg) = bad {
        return Err(msg);
    }
    if !pending.is_empty() {
        return Err("occupied slot without a run");
    }
    match expected_len {
        Some(n) if n != count => Err("element count mismatch"),
        _ => Ok(()),
    }
}
