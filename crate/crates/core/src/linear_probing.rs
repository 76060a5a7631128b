//! Linear probing quotient filter.
//!
//! No status bits and no reordering: a nonzero remainder is stored in the
//! first empty slot at or after its canonical slot, and a query compares
//! every remainder between the canonical slot and the next empty slot. A
//! slot never changes once written, so inserts are a single
//! compare-exchange and the filter is lock-free.

use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::fingerprint::{low_mask, make_nonzero_fingerprint, pow2, FilterParams, Fingerprint, Key};
use crate::qtable::OVERFLOW_SLOTS;
use crate::storage::{GroupTable, SlotLayout};

/// Fill degree at which inserts are refused.
pub const LP_FILL_CAP: f64 = 0.9;

/// Expected number of slots an unsuccessful linear-probing search looks
/// at, counting the empty slot that ends it: `(1 + 1 / (1 - delta)^2) / 2`.
fn unsuccessful_probes(delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidParams("fill degree must be in [0, 1)"));
    }
    Ok(0.5 * (1.0 + 1.0 / ((1.0 - delta) * (1.0 - delta))))
}

/// False positive rate at fill degree `delta` for a filter that stores
/// `remainder_bits + 3` bits per slot, charging every probed slot with a
/// `1 / (2^(r + 3) - 1)` chance of a match:
/// `(1 + 1 / (1 - delta)^2) / 2 / (2^(r + 3) - 1)`.
///
/// The empty slot that ends the search can never match, so this is one
/// slot too pessimistic; see [`lp_expected_fpr`].
pub fn lp_all_probes_fpr(delta: f64, remainder_bits: u32) -> Result<f64> {
    Ok(unsuccessful_probes(delta)? / (pow2(remainder_bits as i32 + 3) - 1.0))
}

/// Expected false positive rate counting only the occupied slots an
/// unsuccessful search compares: `((1 / (1 - delta)^2) - 1) / 2 / (2^(r + 3) - 1)`.
pub fn lp_expected_fpr(delta: f64, remainder_bits: u32) -> Result<f64> {
    Ok((unsuccessful_probes(delta)? - 1.0) / (pow2(remainder_bits as i32 + 3) - 1.0))
}

pub struct LinearProbingQf {
    table: GroupTable,
    params: FilterParams,
    len: AtomicUsize,
}

impl LinearProbingQf {
    /// `params.remainder_bits()` is the stored width. Remainders are always
    /// nonzero.
    pub fn new(params: FilterParams) -> Result<Self> {
        let params = params.with_nonzero_remainder(true);
        let r = params.remainder_bits();
        let layout = SlotLayout::new(0, r)?;
        Ok(LinearProbingQf {
            table: GroupTable::new(layout, params.slots() + OVERFLOW_SLOTS, low_mask(r)),
            params,
            len: AtomicUsize::new(0),
        })
    }

    /// Same memory per slot as a three-status-bit filter with `r` remainder
    /// bits: the remainder grows by three bits.
    pub fn with_same_memory_as(q: u32, r: u32) -> Result<Self> {
        Self::new(FilterParams::new(q, r + 3)?)
    }

    pub fn from_raw_parts(params: FilterParams, len: usize, words: &[u64]) -> Result<Self> {
        let params = params.with_nonzero_remainder(true);
        let r = params.remainder_bits();
        let layout = SlotLayout::new(0, r)?;
        let table = GroupTable::from_words(layout, params.slots() + OVERFLOW_SLOTS, low_mask(r), words)?;
        let stored = (0..table.slots()).filter(|&i| table.get_slot(i) != 0).count();
        if stored != len {
            return Err(Error::Corrupt("element count mismatch"));
        }
        Ok(LinearProbingQf {
            table,
            params,
            len: AtomicUsize::new(len),
        })
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn table(&self) -> &GroupTable {
        &self.table
    }

    /// Approximate under concurrent inserts, exact when quiescent.
    pub fn len(&self) -> usize {
        self.len.load(Ordering::Relaxed)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.params.slots()
    }

    pub fn fill_degree(&self) -> f64 {
        self.len() as f64 / self.capacity() as f64
    }

    /// [`lp_expected_fpr`] at the current fill degree.
    pub fn fpr_estimate(&self) -> f64 {
        let delta = self.fill_degree().min(LP_FILL_CAP);
        lp_expected_fpr(delta, self.params.remainder_bits() - 3).unwrap_or(f64::NAN)
    }

    pub fn fingerprint<K: Key + ?Sized>(&self, key: &K) -> Fingerprint {
        make_nonzero_fingerprint(key, &self.params)
    }

    pub fn insert<K: Key + ?Sized>(&self, key: &K) -> Result<()> {
        self.insert_fingerprint(self.fingerprint(key))
    }

    pub fn contains<K: Key + ?Sized>(&self, key: &K) -> bool {
        self.contains_fingerprint(self.fingerprint(key))
    }

    pub fn insert_fingerprint(&self, fp: Fingerprint) -> Result<()> {
        self.validate(&fp)?;
        if (self.len() + 1) as f64 > LP_FILL_CAP * self.capacity() as f64 {
            return Err(Error::TableFull);
        }
        let layout = *self.table.layout();
        let per = layout.slots_per_group();
        let slots = self.table.slots();
        let mut i = fp.quotient as usize;
        while i < slots {
            let (g, j0) = self.table.locate(i);
            let word = self.table.load_group(g);
            let free = (j0..per).take_while(|j| g * per + j < slots).find(|&j| layout.slot(word, j) == 0);
            match free {
                Some(j) => {
                    if self.table.cas_group(g, word, layout.with_slot(word, j, fp.remainder)) {
                        self.len.fetch_add(1, Ordering::Relaxed);
                        return Ok(());
                    }
                    // lost the race for this group; re-examine from the same slot
                    i = g * per + j;
                }
                None => i = (g + 1) * per,
            }
        }
        Err(Error::TableFull)
    }

    pub fn contains_fingerprint(&self, fp: Fingerprint) -> bool {
        if self.validate(&fp).is_err() {
            return false;
        }
        let layout = *self.table.layout();
        let per = layout.slots_per_group();
        let slots = self.table.slots();
        let mut i = fp.quotient as usize;
        while i < slots {
            let (g, j0) = self.table.locate(i);
            let word = self.table.load_group(g);
            for j in j0..per {
                if g * per + j >= slots {
                    return false;
                }
                match layout.slot(word, j) {
                    0 => return false,
                    v if v == fp.remainder => return true,
                    _ => {}
                }
            }
            i = (g + 1) * per;
        }
        false
    }

    fn validate(&self, fp: &Fingerprint) -> Result<()> {
        if fp.quotient >= self.params.slots() as u64
            || fp.remainder == 0
            || fp.remainder > self.params.remainder_mask()
        {
            return Err(Error::InvalidParams("fingerprint does not match filter parameters"));
        }
        Ok(())
    }

    pub fn slot(&self, i: usize) -> u64 {
        self.table.get_slot(i)
    }

    pub fn words(&self) -> Vec<u64> {
        self.table.snapshot()
    }
}

impl core::fmt::Debug for LinearProbingQf {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("LinearProbingQf")
            .field("params", &self.params)
            .field("len", &self.len())
            .finish()
    }
}
