//! Slot-level quotient-filter algorithms shared by the sequential and the
//! concurrent filters.
//!
//! Everything here works on raw slot codes. The occupied bit is tied to the
//! slot position; continuation, shifted and the remainder travel with the
//! stored element when it is shifted.

use alloc::collections::VecDeque;

use crate::backoff::Backoff;
use crate::error::{Error, Result};
use crate::fingerprint::FilterParams;
use crate::status::*;
use crate::storage::{GroupTable, SlotLayout};

/// Slots past the last canonical slot that shifted elements may spill into.
pub const OVERFLOW_SLOTS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Scheme {
    ThreeBit,
    TwoBit,
}

impl Scheme {
    pub(crate) fn status_bits(self) -> u32 {
        match self {
            Scheme::ThreeBit => 3,
            Scheme::TwoBit => 2,
        }
    }

    fn sentinel(self) -> u64 {
        match self {
            Scheme::ThreeBit => WRITE_LOCK,
            Scheme::TwoBit => TWO_BIT_OCCUPIED | TWO_BIT_NEW_RUN,
        }
    }

    #[inline]
    fn status(self, code: u64) -> u64 {
        code & ((1 << self.status_bits()) - 1)
    }

    #[inline]
    fn rem(self, code: u64) -> u64 {
        code >> self.status_bits()
    }

    /// Whether the slot position has a run (independent of its content).
    #[inline]
    pub(crate) fn occupied(self, code: u64) -> bool {
        let s = self.status(code);
        match self {
            Scheme::ThreeBit => s == READ_LOCK || (s & OCCUPIED != 0 && s != WRITE_LOCK),
            Scheme::TwoBit => s & TWO_BIT_OCCUPIED != 0,
        }
    }

    /// Whether the slot stores an element.
    #[inline]
    pub(crate) fn has_content(self, code: u64) -> bool {
        match self {
            Scheme::ThreeBit => {
                let s = self.status(code);
                s != EMPTY && s != WRITE_LOCK
            }
            Scheme::TwoBit => self.rem(code) != 0,
        }
    }

    #[inline]
    pub(crate) fn run_start(self, code: u64) -> bool {
        match self {
            Scheme::ThreeBit => {
                let s = self.status(code);
                s == READ_LOCK || (s != EMPTY && s & CONTINUATION == 0)
            }
            Scheme::TwoBit => self.rem(code) != 0 && code & TWO_BIT_NEW_RUN != 0,
        }
    }

    #[inline]
    pub(crate) fn continuation(self, code: u64) -> bool {
        match self {
            Scheme::ThreeBit => {
                let s = self.status(code);
                s == CONTINUATION | SHIFTED || s == OCCUPIED | CONTINUATION | SHIFTED
            }
            Scheme::TwoBit => self.rem(code) != 0 && code & TWO_BIT_NEW_RUN == 0,
        }
    }

    /// Three-bit only: the element is not in its canonical slot.
    #[inline]
    pub(crate) fn shifted(self, code: u64) -> bool {
        debug_assert_eq!(self, Scheme::ThreeBit);
        code & SHIFTED != 0
    }

    #[inline]
    pub(crate) fn cluster_start(self, code: u64) -> bool {
        let s = self.status(code);
        s == CLUSTER_START || s == READ_LOCK
    }

    /// Read lock `010` decodes as the cluster start `100` it protects.
    #[inline]
    pub(crate) fn normalize(self, code: u64) -> u64 {
        if self == Scheme::ThreeBit && self.status(code) == READ_LOCK {
            (code & !0b111) | CLUSTER_START
        } else {
            code
        }
    }

    #[inline]
    fn occ_bit(self) -> u64 {
        match self {
            Scheme::ThreeBit => OCCUPIED,
            Scheme::TwoBit => TWO_BIT_OCCUPIED,
        }
    }

    /// The element part of a code, shifted one slot to the right.
    #[inline]
    fn moved(self, code: u64) -> u64 {
        let c = self.normalize(code) & !self.occ_bit();
        match self {
            Scheme::ThreeBit => c | SHIFTED,
            Scheme::TwoBit => c,
        }
    }

    /// Turns a run-start element into a continuation.
    #[inline]
    fn demote(self, content: u64) -> u64 {
        match self {
            Scheme::ThreeBit => content | CONTINUATION,
            Scheme::TwoBit => content & !TWO_BIT_NEW_RUN,
        }
    }

    #[inline]
    pub(crate) fn element(self, remainder: u64, run_start: bool, shifted: bool) -> u64 {
        let sb = self.status_bits();
        match self {
            Scheme::ThreeBit => {
                (remainder << sb)
                    | if run_start { 0 } else { CONTINUATION }
                    | if shifted { SHIFTED } else { 0 }
            }
            Scheme::TwoBit => (remainder << sb) | if run_start { TWO_BIT_NEW_RUN } else { 0 },
        }
    }

    /// Sets the positional occupied bit without disturbing a read lock.
    #[inline]
    fn with_occupied(self, code: u64) -> u64 {
        if self.cluster_start(code) {
            code
        } else {
            code | self.occ_bit()
        }
    }

    #[inline]
    pub(crate) fn read_locked(self, code: u64) -> u64 {
        debug_assert_eq!(self.status(code), CLUSTER_START);
        (code & !0b111) | READ_LOCK
    }
}

/// A group table plus the quotient-filter interpretation of its slots.
pub(crate) struct QTable {
    pub(crate) table: GroupTable,
    pub(crate) params: FilterParams,
    pub(crate) scheme: Scheme,
}

/// Outcome of sealing one slot during a migration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Sealed {
    Empty,
    Content,
}

impl QTable {
    pub(crate) fn layout_for(params: &FilterParams, scheme: Scheme) -> Result<SlotLayout> {
        SlotLayout::new(scheme.status_bits(), params.remainder_bits())
    }

    pub(crate) fn new(params: FilterParams, scheme: Scheme) -> Result<Self> {
        let layout = Self::layout_for(&params, scheme)?;
        let slots = params.slots() + OVERFLOW_SLOTS;
        Ok(QTable {
            table: GroupTable::new(layout, slots, scheme.sentinel()),
            params,
            scheme,
        })
    }

    pub(crate) fn from_words(params: FilterParams, scheme: Scheme, words: &[u64]) -> Result<Self> {
        let layout = Self::layout_for(&params, scheme)?;
        let slots = params.slots() + OVERFLOW_SLOTS;
        Ok(QTable {
            table: GroupTable::from_words(layout, slots, scheme.sentinel(), words)?,
            params,
            scheme,
        })
    }

    #[inline]
    pub(crate) fn get(&self, i: usize) -> u64 {
        self.table.get_slot(i)
    }

    #[inline]
    pub(crate) fn slots(&self) -> usize {
        self.table.slots()
    }

    #[inline]
    pub(crate) fn remainder(&self, code: u64) -> u64 {
        self.scheme.rem(code)
    }

    /// Walks left from `c` to the start of its cluster (three-bit) or
    /// supercluster (two-bit). `c` must hold an element.
    pub(crate) fn cluster_start(&self, c: usize) -> usize {
        let mut i = c;
        match self.scheme {
            Scheme::ThreeBit => {
                while self.scheme.shifted(self.get(i)) {
                    i -= 1;
                }
            }
            Scheme::TwoBit => {
                while i > 0 && self.scheme.has_content(self.get(i - 1)) {
                    i -= 1;
                }
            }
        }
        i
    }

    /// Scans right from a cluster (or supercluster) start and returns the
    /// position where the run of quotient `c` starts. If that quotient has
    /// no run yet (`c_occupied` forced), the result is where it would start.
    pub(crate) fn locate_run(&self, start: usize, c: usize, force_c_occupied: bool) -> usize {
        let mut occ = 0usize;
        let mut runs = 0usize;
        let mut i = start;
        loop {
            if i >= self.slots() {
                return i;
            }
            let code = self.get(i);
            if i <= c && (self.scheme.occupied(code) || (i == c && force_c_occupied)) {
                occ += 1;
            }
            if !self.scheme.has_content(code) {
                return i;
            }
            if self.scheme.run_start(code) {
                runs += 1;
                if i >= c && runs == occ {
                    return i;
                }
            }
            i += 1;
        }
    }

    /// End (exclusive) of the run starting at `p`.
    pub(crate) fn run_end(&self, p: usize) -> usize {
        let mut i = p + 1;
        while i < self.slots() && self.scheme.continuation(self.get(i)) {
            i += 1;
        }
        i
    }

    /// Searches the sorted run starting at `p` for `rem`.
    pub(crate) fn run_contains(&self, p: usize, rem: u64) -> bool {
        let mut i = p;
        loop {
            let stored = self.remainder(self.get(i));
            if stored == rem {
                return true;
            }
            if stored > rem {
                return false;
            }
            i += 1;
            if i >= self.slots() || !self.scheme.continuation(self.get(i)) {
                return false;
            }
        }
    }

    /// Lock-free membership test; correct whenever no insert is moving
    /// elements of the probed cluster.
    pub(crate) fn query_unlocked(&self, c: usize, rem: u64) -> bool {
        if !self.scheme.occupied(self.get(c)) {
            return false;
        }
        let start = self.cluster_start(c);
        let p = self.locate_run(start, c, false);
        self.run_contains(p, rem)
    }

    /// Where `rem` goes for quotient `c` given the cluster start, and
    /// whether it becomes the new head of an existing run.
    pub(crate) fn insertion_point(&self, start: usize, c: usize, rem: u64, c_occupied: bool) -> (usize, bool) {
        let p = self.locate_run(start, c, true);
        if !c_occupied {
            return (p, false);
        }
        let mut i = p;
        loop {
            if self.remainder(self.get(i)) >= rem {
                return (i, i == p);
            }
            i += 1;
            if i >= self.slots() || !self.scheme.continuation(self.get(i)) {
                return (i, false);
            }
        }
    }

    /// First slot at or after `i` that holds no element, if any.
    pub(crate) fn first_free(&self, mut i: usize) -> Option<usize> {
        while i < self.slots() {
            if !self.scheme.has_content(self.get(i)) {
                return Some(i);
            }
            i += 1;
        }
        None
    }

    /// Single-threaded insert of `(c, rem)`.
    pub(crate) fn insert_sequential(&self, c: usize, rem: u64) -> Result<()> {
        let code_c = self.get(c);
        if code_c == 0 {
            let elem = self.scheme.element(rem, true, false);
            self.table.set_slot(c, self.scheme.with_occupied(elem));
            return Ok(());
        }
        let c_occupied = self.scheme.occupied(code_c);
        let start = self.cluster_start(c);
        let (pos, head) = self.insertion_point(start, c, rem, c_occupied);
        let end = self.first_free(pos).ok_or(Error::TableFull)?;
        let elem = self.scheme.element(rem, !c_occupied || head, pos != c);
        self.shift_insert(pos, end, elem, c, head, None);
        Ok(())
    }

    /// Places `elem` at `pos` and moves the elements in `pos..end` one slot to
    /// the right, overwriting `end`. The occupied bit of `occ_at` is set. If
    /// `demote_first`, the element previously at `pos` becomes a continuation.
    ///
    /// Groups are rewritten left to right with one compare-exchange each, so
    /// every group is always either entirely before or entirely after the
    /// operation. With `own_lock`, the slot holding the caller's read lock
    /// keeps its lock code, and the call waits for foreign read locks inside
    /// the moved range before rewriting their group.
    pub(crate) fn shift_insert(
        &self,
        pos: usize,
        end: usize,
        elem: u64,
        occ_at: usize,
        demote_first: bool,
        own_lock: Option<usize>,
    ) {
        debug_assert!(pos <= end && end < self.slots());
        let layout = *self.table.layout();
        let per = layout.slots_per_group();
        let scheme = self.scheme;
        let first_g = occ_at.min(pos) / per;
        let last_g = end / per;
        // old code of the slot left of the current group, if it is being moved
        let mut carry: Option<u64> = None;
        for g in first_g..=last_g {
            let base = g * per;
            let lo = pos.max(base);
            let hi = end.min(base + per - 1);
            let touches_range = lo <= hi;
            let touches_occ = occ_at / per == g;
            if !touches_range && !touches_occ {
                continue;
            }
            let mut backoff = Backoff::new();
            let mut cur = self.table.load_group(g);
            loop {
                if own_lock.is_some() && touches_range && self.foreign_read_lock(cur, base, lo, hi, own_lock) {
                    backoff.snooze();
                    cur = self.table.load_group(g);
                    continue;
                }
                let mut word = cur;
                let mut prev = carry;
                if touches_range {
                    for i in lo..=hi {
                        let j = i - base;
                        let old = layout.slot(cur, j);
                        let content = if i == pos {
                            elem
                        } else {
                            let moved = scheme.moved(prev.expect("carry for shifted slot"));
                            if demote_first && i == pos + 1 {
                                scheme.demote(moved)
                            } else {
                                moved
                            }
                        };
                        let mut code = if scheme.occupied(old) || i == occ_at {
                            content | scheme.occ_bit()
                        } else {
                            content
                        };
                        if own_lock == Some(i) {
                            code = scheme.read_locked(code);
                        }
                        word = layout.with_slot(word, j, code);
                        prev = Some(old);
                    }
                }
                if touches_occ && !(lo..=hi).contains(&occ_at) {
                    let j = occ_at - base;
                    word = layout.with_slot(word, j, scheme.with_occupied(layout.slot(word, j)));
                }
                let ok = word == cur || self.table.cas_group(g, cur, word);
                if ok {
                    carry = if touches_range && hi == base + per - 1 && hi < end { prev } else { None };
                    break;
                }
                cur = self.table.load_group(g);
            }
        }
    }

    fn foreign_read_lock(&self, word: u64, base: usize, lo: usize, hi: usize, own: Option<usize>) -> bool {
        let layout = self.table.layout();
        (lo..=hi).any(|i| Some(i) != own && layout.status_of(layout.slot(word, i - base)) == READ_LOCK)
    }

    /// Calls `f(position, quotient, remainder)` for every element of the
    /// superclusters that start in `from..to`, in slot order. Read locks are
    /// treated as the cluster starts they protect. Returns the first slot
    /// after the last visited supercluster.
    pub(crate) fn decode_superclusters(&self, from: usize, to: usize, mut f: impl FnMut(usize, usize, u64)) -> usize {
        let mut pending: VecDeque<usize> = VecDeque::new();
        let mut current: Option<usize> = None;
        let mut i = from;
        while i < self.slots() {
            let code = self.get(i);
            if !self.scheme.has_content(code) {
                debug_assert!(pending.is_empty());
                current = None;
                // a supercluster starting at i + 1 belongs to the next range
                if i + 1 >= to {
                    break;
                }
                i += 1;
                continue;
            }
            if self.scheme.occupied(code) {
                pending.push_back(i);
            }
            if self.scheme.run_start(code) {
                current = pending.pop_front();
            }
            let quotient = current.expect("element without a run");
            f(i, quotient, self.remainder(code));
            i += 1;
        }
        i
    }

    /// Waits out a normal write lock on slot `i`, then seals it with a
    /// migration lock if it is empty.
    pub(crate) fn seal(&self, i: usize) -> Sealed {
        let layout = *self.table.layout();
        let (g, j) = self.table.locate(i);
        let lock = layout.code(WRITE_LOCK, MIGRATION_LOCK_REMAINDER);
        let mut backoff = Backoff::new();
        let mut cur = self.table.load_group(g);
        loop {
            let code = layout.slot(cur, j);
            if code == 0 {
                match self.table.compare_exchange_group(g, cur, layout.with_slot(cur, j, code | lock)) {
                    Ok(_) => return Sealed::Empty,
                    Err(actual) => {
                        cur = actual;
                        continue;
                    }
                }
            }
            if layout.status_of(code) == WRITE_LOCK {
                if layout.remainder_of(code) != 0 {
                    return Sealed::Empty;
                }
                backoff.snooze();
                cur = self.table.load_group(g);
                continue;
            }
            return Sealed::Content;
        }
    }
}

/// Appends elements in fingerprint order to a fresh table. Slots are
/// OR-ed in, so disjoint appenders may share boundary groups.
pub(crate) struct Appender {
    last: Option<(usize, usize)>,
}

impl Appender {
    pub(crate) fn new() -> Self {
        Appender { last: None }
    }

    pub(crate) fn push(&mut self, t: &QTable, quotient: usize, rem: u64) -> Result<usize> {
        let (pos, run_start) = match self.last {
            Some((lp, lq)) => ((lp + 1).max(quotient), lq != quotient),
            None => (quotient, true),
        };
        if pos >= t.slots() {
            return Err(Error::TableFull);
        }
        t.table.or_slot(pos, t.scheme.element(rem, run_start, pos != quotient));
        t.table.or_slot(quotient, t.scheme.occ_bit());
        self.last = Some((pos, quotient));
        Ok(pos)
    }
}
