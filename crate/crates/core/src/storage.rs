//! Packed slot storage.
//!
//! Slots of `status_bits + remainder_bits` bits are packed into 64-bit
//! groups. A slot never straddles two groups; unused high bits of a group
//! stay zero. Every group is an `AtomicU64`, so all slots inside one group
//! are read and updated together.
//!
//! Ordering contract: group loads are `Acquire` and successful
//! compare-exchanges are `AcqRel`. A thread that observes a group written by
//! another thread (including a lock release) also observes every table write
//! that thread made before it.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::fingerprint::low_mask;

/// Number of `slot_bits`-wide slots that fit into one 64-bit group.
pub const fn slots_per_group(slot_bits: u32) -> usize {
    assert!(slot_bits >= 1 && slot_bits <= 64);
    (64 / slot_bits) as usize
}

/// Bit layout of one slot: the status code sits in the low bits, the
/// remainder above it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotLayout {
    status_bits: u32,
    remainder_bits: u32,
    slot_bits: u32,
    per_group: usize,
    slot_mask: u64,
}

impl SlotLayout {
    pub fn new(status_bits: u32, remainder_bits: u32) -> Result<Self> {
        let slot_bits = status_bits + remainder_bits;
        if remainder_bits == 0 || slot_bits > 64 {
            return Err(Error::InvalidParams("slot must hold 1..=64 bits with a remainder"));
        }
        Ok(SlotLayout {
            status_bits,
            remainder_bits,
            slot_bits,
            per_group: slots_per_group(slot_bits),
            slot_mask: low_mask(slot_bits),
        })
    }

    #[inline]
    pub fn status_bits(&self) -> u32 {
        self.status_bits
    }

    #[inline]
    pub fn remainder_bits(&self) -> u32 {
        self.remainder_bits
    }

    #[inline]
    pub fn slot_bits(&self) -> u32 {
        self.slot_bits
    }

    #[inline]
    pub fn slots_per_group(&self) -> usize {
        self.per_group
    }

    /// High bits of each group that never hold a slot.
    pub fn waste_bits(&self) -> u32 {
        64 - self.slot_bits * self.per_group as u32
    }

    #[inline]
    pub fn code(&self, status: u64, remainder: u64) -> u64 {
        debug_assert!(status <= low_mask(self.status_bits) || self.status_bits == 0);
        (remainder << self.status_bits) | status
    }

    #[inline]
    pub fn status_of(&self, code: u64) -> u64 {
        code & low_mask(self.status_bits)
    }

    #[inline]
    pub fn remainder_of(&self, code: u64) -> u64 {
        if self.status_bits == 0 {
            code
        } else {
            code >> self.status_bits
        }
    }

    #[inline]
    pub fn slot(&self, word: u64, j: usize) -> u64 {
        let shift = j as u32 * self.slot_bits;
        if shift >= 64 {
            0
        } else {
            (word >> shift) & self.slot_mask
        }
    }

    #[inline]
    pub fn with_slot(&self, word: u64, j: usize, code: u64) -> u64 {
        debug_assert!(j < self.per_group);
        debug_assert!(code <= self.slot_mask);
        let shift = j as u32 * self.slot_bits;
        (word & !(self.slot_mask << shift)) | (code << shift)
    }

    pub fn pack(&self, codes: &[u64]) -> u64 {
        assert!(codes.len() <= self.per_group);
        codes
            .iter()
            .enumerate()
            .fold(0, |w, (j, &c)| self.with_slot(w, j, c))
    }

    pub fn unpack(&self, word: u64) -> Vec<u64> {
        (0..self.per_group).map(|j| self.slot(word, j)).collect()
    }
}

/// The shared slot array.
///
/// Indices `0..slots` are addressable. The table is padded to whole groups
/// plus at least one extra slot; padding slots hold a fixed sentinel code.
pub struct GroupTable {
    words: Box<[AtomicU64]>,
    layout: SlotLayout,
    slots: usize,
    sentinel: u64,
    #[cfg(feature = "instrument")]
    accesses: AtomicU64,
}

impl GroupTable {
    pub fn new(layout: SlotLayout, slots: usize, sentinel: u64) -> Self {
        let per = layout.slots_per_group();
        let groups = (slots + 1).div_ceil(per);
        let mut words: Vec<AtomicU64> = (0..groups).map(|_| AtomicU64::new(0)).collect();
        for i in slots..groups * per {
            let w = words[i / per].get_mut();
            *w = layout.with_slot(*w, i % per, sentinel);
        }
        GroupTable {
            words: words.into_boxed_slice(),
            layout,
            slots,
            sentinel,
            #[cfg(feature = "instrument")]
            accesses: AtomicU64::new(0),
        }
    }

    /// Rebuilds a table from a snapshot produced by [`GroupTable::snapshot`].
    pub fn from_words(layout: SlotLayout, slots: usize, sentinel: u64, words: &[u64]) -> Result<Self> {
        let table = GroupTable::new(layout, slots, sentinel);
        if words.len() != table.words.len() {
            return Err(Error::Corrupt("group count does not match parameters"));
        }
        let waste = !low_mask(layout.slot_bits() * layout.slots_per_group() as u32);
        for (g, (&w, expect)) in words.iter().zip(table.words.iter()).enumerate() {
            if w & waste != 0 {
                return Err(Error::Corrupt("nonzero waste bits"));
            }
            let per = layout.slots_per_group();
            for j in 0..per {
                let i = g * per + j;
                if i >= slots && layout.slot(w, j) != sentinel {
                    return Err(Error::Corrupt("padding slot is not a sentinel"));
                }
            }
            expect.store(w, Ordering::Relaxed);
        }
        Ok(table)
    }

    #[inline]
    pub fn layout(&self) -> &SlotLayout {
        &self.layout
    }

    /// Addressable slot count.
    #[inline]
    pub fn slots(&self) -> usize {
        self.slots
    }

    #[inline]
    pub fn groups(&self) -> usize {
        self.words.len()
    }

    #[inline]
    pub fn sentinel(&self) -> u64 {
        self.sentinel
    }

    /// `(group index, position inside the group)` of slot `i`.
    #[inline]
    pub fn locate(&self, i: usize) -> (usize, usize) {
        let per = self.layout.slots_per_group();
        (i / per, i % per)
    }

    #[inline]
    fn touch(&self) {
        #[cfg(feature = "instrument")]
        self.accesses.fetch_add(1, Ordering::Relaxed);
    }

    /// Atomic snapshot of one group.
    #[inline]
    pub fn load_group(&self, g: usize) -> u64 {
        self.touch();
        self.words[g].load(Ordering::Acquire)
    }

    /// Replaces group `g` with `desired` iff it still equals `expected`.
    #[inline]
    pub fn cas_group(&self, g: usize, expected: u64, desired: u64) -> bool {
        self.compare_exchange_group(g, expected, desired).is_ok()
    }

    /// Like [`cas_group`](Self::cas_group) but returns the current word on
    /// failure.
    #[inline]
    pub fn compare_exchange_group(&self, g: usize, expected: u64, desired: u64) -> Result<u64, u64> {
        self.touch();
        self.words[g].compare_exchange(expected, desired, Ordering::AcqRel, Ordering::Acquire)
    }

    #[inline]
    pub fn get_slot(&self, i: usize) -> u64 {
        assert!(i < self.slots, "slot index out of range");
        let (g, j) = self.locate(i);
        self.layout.slot(self.load_group(g), j)
    }

    /// Read-modify-write of the group containing slot `i`.
    pub fn set_slot(&self, i: usize, code: u64) {
        assert!(i < self.slots, "slot index out of range");
        let (g, j) = self.locate(i);
        let mut cur = self.load_group(g);
        loop {
            let new = self.layout.with_slot(cur, j, code);
            match self.compare_exchange_group(g, cur, new) {
                Ok(_) => return,
                Err(actual) => cur = actual,
            }
        }
    }

    /// ORs `code` into slot `i`. Used to fill fresh tables whose slots are
    /// written by several threads at group granularity.
    #[inline]
    pub(crate) fn or_slot(&self, i: usize, code: u64) {
        let (g, j) = self.locate(i);
        let shift = j as u32 * self.layout.slot_bits();
        self.touch();
        self.words[g].fetch_or(code << shift, Ordering::AcqRel);
    }

    /// Non-atomic view of all groups (meaningful only when quiescent).
    pub fn snapshot(&self) -> Vec<u64> {
        self.words.iter().map(|w| w.load(Ordering::Acquire)).collect()
    }

    /// Group loads plus compare-exchanges since creation or the last reset.
    #[cfg(feature = "instrument")]
    pub fn accesses(&self) -> u64 {
        self.accesses.load(Ordering::Relaxed)
    }

    #[cfg(feature = "instrument")]
    pub fn reset_accesses(&self) {
        self.accesses.store(0, Ordering::Relaxed);
    }
}

impl core::fmt::Debug for GroupTable {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("GroupTable")
            .field("layout", &self.layout)
            .field("slots", &self.slots)
            .field("groups", &self.words.len())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Arc;
    use std::vec;

    #[test]
    fn group_capacity() {
        assert_eq!(slots_per_group(8), 8);
        assert_eq!(SlotLayout::new(3, 5).unwrap().waste_bits(), 0);
        assert_eq!(slots_per_group(13), 4);
        assert_eq!(SlotLayout::new(3, 10).unwrap().waste_bits(), 12);
        assert_eq!(slots_per_group(64), 1);
        assert_eq!(slots_per_group(1), 64);
    }

    #[test]
    fn fresh_table_is_zero_with_sentinels() {
        let layout = SlotLayout::new(3, 5).unwrap();
        let t = GroupTable::new(layout, 16, 0b110);
        // 16 slots fill two groups exactly, so a third group carries sentinels
        assert_eq!(t.groups(), 3);
        assert_eq!(t.load_group(0), 0);
        assert_eq!(t.load_group(1), 0);
        assert!(t.layout().unpack(t.load_group(2)).iter().all(|&c| c == 0b110));
    }

    #[test]
    fn set_get_and_masking() {
        let layout = SlotLayout::new(3, 10).unwrap();
        let t = GroupTable::new(layout, 20, 0);
        for i in 0..4 {
            t.set_slot(i, layout.code(0b101, 100 + i as u64));
        }
        t.set_slot(3, layout.code(0b011, 999));
        for i in 0..3 {
            assert_eq!(t.get_slot(i), layout.code(0b101, 100 + i as u64));
        }
        assert_eq!(t.get_slot(3), layout.code(0b011, 999));
        assert_eq!(t.load_group(0) >> 52, 0, "waste bits stay zero");
    }

    #[test]
    fn cas_semantics() {
        let layout = SlotLayout::new(3, 5).unwrap();
        let t = GroupTable::new(layout, 8, 0);
        assert!(t.cas_group(0, 0, 42));
        assert_eq!(t.load_group(0), 42);
        assert!(!t.cas_group(0, 0, 7));
        assert_eq!(t.load_group(0), 42);
        assert_eq!(t.compare_exchange_group(0, 1, 2), Err(42));
    }

    #[test]
    #[should_panic]
    fn out_of_range_slot() {
        let t = GroupTable::new(SlotLayout::new(3, 5).unwrap(), 8, 0);
        t.get_slot(8);
    }

    #[test]
    fn from_words_rejects_bad_input() {
        let layout = SlotLayout::new(3, 10).unwrap();
        let t = GroupTable::new(layout, 8, 0b110);
        let mut words = t.snapshot();
        assert!(GroupTable::from_words(layout, 8, 0b110, &words).is_ok());
        assert!(GroupTable::from_words(layout, 8, 0b110, &words[1..]).is_err());
        words[0] |= 1 << 60;
        assert!(GroupTable::from_words(layout, 8, 0b110, &words).is_err());
    }

    #[test]
    fn concurrent_disjoint_slot_counters() {
        // each thread owns one slot of a single group and increments it
        let layout = SlotLayout::new(0, 16).unwrap();
        let t = Arc::new(GroupTable::new(layout, 4, 0));
        let rounds = 5_000u64;
        let handles: Vec<_> = (0..4)
            .map(|slot| {
                let t = Arc::clone(&t);
                std::thread::spawn(move || {
                    for _ in 0..rounds {
                        let mut cur = t.load_group(0);
                        loop {
                            let v = layout.slot(cur, slot) + 1;
                            match t.compare_exchange_group(0, cur, layout.with_slot(cur, slot, v)) {
                                Ok(_) => break,
                                Err(actual) => cur = actual,
                            }
                        }
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        for slot in 0..4 {
            assert_eq!(t.get_slot(slot), rounds);
        }
    }

    #[test]
    fn no_torn_reads() {
        // writers publish words whose slots all carry the same value; any
        // observed group must therefore be uniform
        let layout = SlotLayout::new(3, 5).unwrap();
        let t = Arc::new(GroupTable::new(layout, 8, 0));
        let stop = Arc::new(core::sync::atomic::AtomicBool::new(false));
        let writers: Vec<_> = (1..=3u64)
            .map(|id| {
                let t = Arc::clone(&t);
                std::thread::spawn(move || {
                    for k in 0..20_000u64 {
                        let v = (id * 31 + k) % 256;
                        let word = layout.pack(&[v; 8]);
                        let cur = t.load_group(0);
                        let _ = t.cas_group(0, cur, word);
                    }
                })
            })
            .collect();
        let reader = {
            let t = Arc::clone(&t);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                let mut seen = 0;
                while !stop.load(Ordering::Relaxed) {
                    let w = t.load_group(0);
                    let slots = layout.unpack(w);
                    assert!(slots.iter().all(|&s| s == slots[0]), "torn word {w:#x}");
                    seen += 1;
                }
                seen
            })
        };
        for w in writers {
            w.join().unwrap();
        }
        stop.store(true, Ordering::Relaxed);
        assert!(reader.join().unwrap() > 0);
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(r in 1u32..=61, seed: u64) {
            let layout = SlotLayout::new(3, r).unwrap();
            let mut x = seed;
            let codes: Vec<u64> = (0..layout.slots_per_group())
                .map(|_| {
                    x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    x & low_mask(r + 3)
                })
                .collect();
            let word = layout.pack(&codes);
            prop_assert_eq!(layout.unpack(word), codes);
            prop_assert_eq!(word & !low_mask(layout.slot_bits() * layout.slots_per_group() as u32), 0);
        }

        #[test]
        fn set_get_matches_array_model(ops in proptest::collection::vec((0usize..37, 0u64..(1 << 13)), 1..200)) {
            let layout = SlotLayout::new(3, 10).unwrap();
            let t = GroupTable::new(layout, 37, 0);
            let mut model = vec![0u64; 37];
            for (i, v) in ops {
                t.set_slot(i, v);
                model[i] = v;
            }
            for (i, &v) in model.iter().enumerate() {
                prop_assert_eq!(t.get_slot(i), v);
            }
        }
    }
}
