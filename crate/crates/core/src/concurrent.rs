//! Concurrent quotient filter with locks stored in the table itself.
//!
//! The three-bit layout never produces the status codes `010` and `110` on
//! its own. This filter uses them as locks:
//!
//! - `010` marks a cluster start (`100`) that is locked by a query or an
//!   insert. The lock is exclusive; the name "read lock" is historical.
//! - `110` with remainder zero is a write lock on the empty slot right of
//!   the supercluster an insert is modifying. The insert finishes by
//!   overwriting it.
//! - `110` with a nonzero remainder seals an empty slot during a
//!   migration. It is never released.
//!
//! Inserts into an empty canonical slot and queries whose answer is
//! decidable from the group holding the canonical slot take no locks.
//!
//! When the fill degree reaches [`ConcurrentConfig::grow_at`] the filter
//! grows by one bounded-growing step. Every thread that notices the
//! migration helps: the old table is split into blocks of
//! [`MIGRATION_BLOCK_SLOTS`] slots which are claimed through a shared
//! counter, and the superclusters that start in a block are copied into the
//! new table by whoever claimed it.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::ptr;
use core::sync::atomic::{AtomicBool, AtomicPtr, AtomicUsize, Ordering};

use crate::backoff::Backoff;
use crate::error::{Error, Result};
use crate::fingerprint::{make_fingerprint, rebase_fingerprint, FilterParams, Fingerprint, Key, MAX_QUOTIENT_BITS};
use crate::qtable::{Appender, QTable, Scheme, Sealed};
use crate::sequential::{check_table, QuotientFilter, Variant};
use crate::status::{CLUSTER_START, READ_LOCK, WRITE_LOCK};

/// Slots per migration work unit.
pub const MIGRATION_BLOCK_SLOTS: usize = 4096;
/// Default fill degree that triggers growing.
pub const DEFAULT_GROW_AT: f64 = 0.85;
/// Inserts into a filter that cannot grow fail beyond this fill degree.
pub const HARD_FILL_CAP: f64 = 0.95;

const MAX_GENERATIONS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcurrentConfig {
    /// Fill degree at which the table grows.
    pub grow_at: f64,
    /// Whether the table grows at all.
    pub growing: bool,
    /// No growing step goes beyond this many quotient bits.
    pub max_quotient_bits: u32,
}

impl Default for ConcurrentConfig {
    fn default() -> Self {
        ConcurrentConfig {
            grow_at: DEFAULT_GROW_AT,
            growing: true,
            max_quotient_bits: MAX_QUOTIENT_BITS,
        }
    }
}

impl ConcurrentConfig {
    /// A table that never grows and refuses inserts past [`HARD_FILL_CAP`].
    pub fn fixed() -> Self {
        ConcurrentConfig {
            growing: false,
            ..Self::default()
        }
    }

    pub fn with_grow_at(mut self, grow_at: f64) -> Self {
        self.grow_at = grow_at;
        self
    }

    pub fn with_max_quotient_bits(mut self, bits: u32) -> Self {
        self.max_quotient_bits = bits;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.grow_at > 0.0 && self.grow_at <= HARD_FILL_CAP) {
            return Err(Error::InvalidParams("grow_at must be in (0, 0.95]"));
        }
        Ok(())
    }
}

/// Lock transitions reported to a [`LockObserver`]. The payload is the slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockEvent {
    WriteAcquired(usize),
    WriteReleased(usize),
    ReadAcquired(usize),
    ReadReleased(usize),
}

/// Receives the lock events of one operation, in order.
pub trait LockObserver {
    fn observe(&self, event: LockEvent);
}

impl LockObserver for () {
    #[inline(always)]
    fn observe(&self, _: LockEvent) {}
}

/// One generation of the table plus its migration bookkeeping.
pub(crate) struct Table {
    pub(crate) qt: QTable,
    pub(crate) count: AtomicUsize,
    next_block: AtomicUsize,
    done_blocks: AtomicUsize,
    target_claimed: AtomicBool,
}

impl Table {
    fn new(qt: QTable, count: usize) -> Self {
        Table {
            qt,
            count: AtomicUsize::new(count),
            next_block: AtomicUsize::new(0),
            done_blocks: AtomicUsize::new(0),
            target_claimed: AtomicBool::new(false),
        }
    }

    fn blocks(&self) -> usize {
        self.qt.slots().div_ceil(MIGRATION_BLOCK_SLOTS)
    }

    /// Fast path: one load and one compare-exchange of the canonical group.
    #[inline]
    pub(crate) fn try_trivial_insert(&self, fp: Fingerprint) -> bool {
        let layout = self.qt.table.layout();
        let (g, j) = self.qt.table.locate(fp.quotient as usize);
        let word = self.qt.table.load_group(g);
        layout.slot(word, j) == 0
            && self
                .qt
                .table
                .cas_group(g, word, layout.with_slot(word, j, layout.code(CLUSTER_START, fp.remainder)))
    }

    #[inline]
    pub(crate) fn canonical_empty(&self, fp: Fingerprint) -> bool {
        self.qt.get(fp.quotient as usize) == 0
    }

    fn insert<O: LockObserver>(&self, fp: Fingerprint, obs: &O) -> core::result::Result<(), Abort> {
        if self.try_trivial_insert(fp) {
            return Ok(());
        }
        let qt = &self.qt;
        let c = fp.quotient as usize;
        let rem = fp.remainder;

        // write-lock the empty slot that ends the supercluster
        let w = self.acquire_write_lock(c)?;
        obs.observe(LockEvent::WriteAcquired(w));
        if w == c {
            qt.table.set_slot(c, qt.table.layout().code(CLUSTER_START, rem));
            obs.observe(LockEvent::WriteReleased(w));
            return Ok(());
        }

        // lock the cluster start
        let cs = self.lock_cluster(c);
        obs.observe(LockEvent::ReadAcquired(cs));

        // find the run and the sorted position inside it
        let c_occupied = qt.scheme.occupied(qt.get(c));
        let (pos, head) = qt.insertion_point(cs, c, rem, c_occupied);
        debug_assert!(pos <= w);

        // shift up to the write lock, then release the cluster
        let elem = qt.scheme.element(rem, !c_occupied || head, pos != c);
        qt.shift_insert(pos, w, elem, c, head, Some(cs));
        obs.observe(LockEvent::WriteReleased(w));
        self.unlock_cluster(cs);
        obs.observe(LockEvent::ReadReleased(cs));
        Ok(())
    }

    fn acquire_write_lock(&self, c: usize) -> core::result::Result<usize, Abort> {
        let table = &self.qt.table;
        let layout = *table.layout();
        let lock = layout.code(WRITE_LOCK, 0);
        let mut backoff = Backoff::new();
        let mut i = c;
        loop {
            if i >= table.slots() {
                return Err(Abort::Full);
            }
            let (g, j) = table.locate(i);
            let word = table.load_group(g);
            let code = layout.slot(word, j);
            if code == 0 {
                if table.cas_group(g, word, layout.with_slot(word, j, lock)) {
                    return Ok(i);
                }
                continue;
            }
            if layout.status_of(code) == WRITE_LOCK {
                if layout.remainder_of(code) != 0 {
                    return Err(Abort::Migrating);
                }
                backoff.snooze();
                continue;
            }
            i += 1;
        }
    }

    /// Locks the start of the cluster containing `c`, which must hold an
    /// element. Retries until the locked slot is verified to still start
    /// that cluster.
    fn lock_cluster(&self, c: usize) -> usize {
        let qt = &self.qt;
        let layout = *qt.table.layout();
        let mut backoff = Backoff::new();
        loop {
            let mut i = c;
            let mut code = qt.get(i);
            while i > 0 && qt.scheme.shifted(code) {
                i -= 1;
                code = qt.get(i);
            }
            match layout.status_of(code) {
                READ_LOCK => {
                    backoff.snooze();
                    continue;
                }
                CLUSTER_START => {}
                _ => continue,
            }
            let (g, j) = qt.table.locate(i);
            let word = qt.table.load_group(g);
            if layout.slot(word, j) != code
                || !qt.table.cas_group(g, word, layout.with_slot(word, j, qt.scheme.read_locked(code)))
            {
                continue;
            }
            let mut k = c;
            while k > i && qt.scheme.shifted(qt.get(k)) {
                k -= 1;
            }
            if k == i {
                return i;
            }
            self.unlock_cluster(i);
        }
    }

    fn unlock_cluster(&self, cs: usize) {
        let code = self.qt.get(cs);
        debug_assert_eq!(self.qt.table.layout().status_of(code), READ_LOCK);
        self.qt.table.set_slot(cs, (code & !0b111) | CLUSTER_START);
    }

    /// Lock-free path: answers from the canonical group alone when possible.
    fn query_fast(&self, fp: Fingerprint) -> Option<bool> {
        let qt = &self.qt;
        let scheme = qt.scheme;
        let layout = *qt.table.layout();
        let per = layout.slots_per_group();
        let c = fp.quotient as usize;
        let (g, _) = qt.table.locate(c);
        let word = qt.table.load_group(g);
        let base = g * per;
        let top = base + per;
        let at = |i: usize| layout.slot(word, i - base);

        if !scheme.occupied(at(c)) {
            return Some(false);
        }
        let mut cs = c;
        while scheme.shifted(at(cs)) {
            if cs == base {
                return None;
            }
            cs -= 1;
        }
        if !scheme.cluster_start(at(cs)) {
            return None;
        }
        let (mut occ, mut runs) = (0usize, 0usize);
        let mut run = None;
        for i in cs..top {
            let code = at(i);
            if i <= c && scheme.occupied(code) {
                occ += 1;
            }
            if !scheme.has_content(code) {
                return None;
            }
            if scheme.run_start(code) {
                runs += 1;
                if i >= c && runs == occ {
                    run = Some(i);
                    break;
                }
            }
        }
        let mut i = run?;
        loop {
            let stored = qt.remainder(at(i));
            if stored == fp.remainder {
                return Some(true);
            }
            if stored > fp.remainder {
                return Some(false);
            }
            i += 1;
            if i >= top {
                return None;
            }
            if !scheme.continuation(at(i)) {
                return Some(false);
            }
        }
    }

    fn query<O: LockObserver>(&self, fp: Fingerprint, obs: &O) -> bool {
        if let Some(answer) = self.query_fast(fp) {
            return answer;
        }
        let qt = &self.qt;
        let c = fp.quotient as usize;
        if !qt.scheme.occupied(qt.get(c)) {
            return false;
        }
        // slow path under the cluster lock
        let cs = self.lock_cluster(c);
        obs.observe(LockEvent::ReadAcquired(cs));
        let p = qt.locate_run(cs, c, false);
        let found = qt.run_contains(p, fp.remainder);
        self.unlock_cluster(cs);
        obs.observe(LockEvent::ReadReleased(cs));
        found
    }

    /// Copies the superclusters that start in block `b` into `dst`.
    fn migrate_block(&self, dst: &Table, b: usize) {
        let src = &self.qt;
        let total = src.slots();
        let s = b * MIGRATION_BLOCK_SLOTS;
        let e = (s + MIGRATION_BLOCK_SLOTS).min(total);

        // seal every empty slot from s - 1 to the first empty slot at or after e
        let mut i = s.saturating_sub(1);
        while i < total {
            if src.seal(i) == Sealed::Empty && i >= e {
                break;
            }
            i += 1;
        }

        // a supercluster reaching in from the left belongs to the previous block
        let mut from = s;
        if s > 0 && src.scheme.has_content(src.get(s - 1)) {
            while from < total && src.scheme.has_content(src.get(from)) {
                from += 1;
            }
        }

        let old = src.params;
        let new = dst.qt.params;
        let mut appender = Appender::new();
        let mut moved = 0usize;
        src.decode_superclusters(from, e, |_, quotient, rem| {
            let fp = rebase_fingerprint(quotient as u64, rem, &old, &new).expect("element of the source table");
            appender
                .push(&dst.qt, fp.quotient as usize, fp.remainder)
                .expect("grown table overflow area exhausted");
            moved += 1;
        });
        dst.count.fetch_add(moved, Ordering::Relaxed);
    }
}

enum Abort {
    Migrating,
    Full,
}

pub struct ConcurrentQf {
    tables: [AtomicPtr<Table>; MAX_GENERATIONS],
    generation: AtomicUsize,
    base: FilterParams,
    config: ConcurrentConfig,
}

// SAFETY: tables are only reached through atomics and are freed in `drop`.
unsafe impl Send for ConcurrentQf {}
unsafe impl Sync for ConcurrentQf {}

impl ConcurrentQf {
    /// Creates an empty filter. Fingerprints have `q + r` bits for the
    /// lifetime of the filter; growing moves bits from remainder to quotient.
    pub fn new(params: FilterParams, config: ConcurrentConfig) -> Result<Self> {
        config.validate()?;
        let params = params.with_nonzero_remainder(false);
        Ok(Self::with_table(params, config, Table::new(QTable::new(params, Scheme::ThreeBit)?, 0), 0))
    }

    fn with_table(base: FilterParams, config: ConcurrentConfig, table: Table, generation: usize) -> Self {
        let tables = core::array::from_fn(|_| AtomicPtr::new(ptr::null_mut()));
        tables[generation].store(Box::into_raw(Box::new(table)), Ordering::Release);
        ConcurrentQf {
            tables,
            generation: AtomicUsize::new(generation),
            base,
            config,
        }
    }

    /// Restores a stable filter. `params` describe the current table; the
    /// fingerprint length is `q + r` of `params`.
    pub fn from_raw_parts(params: FilterParams, config: ConcurrentConfig, len: usize, words: &[u64]) -> Result<Self> {
        config.validate()?;
        let params = params.with_nonzero_remainder(false);
        let qt = QTable::from_words(params, Scheme::ThreeBit, words)?;
        check_table(&qt, Some(len)).map_err(Error::Corrupt)?;
        Ok(Self::with_table(params, config, Table::new(qt, len), 0))
    }

    #[inline]
    pub(crate) fn table(&self, g: usize) -> &Table {
        let p = self.tables[g].load(Ordering::Acquire);
        debug_assert!(!p.is_null());
        // SAFETY: tables up to the current generation are published before
        // the generation counter and are only freed in `drop`.
        unsafe { &*p }
    }

    #[inline]
    pub(crate) fn current(&self) -> (usize, &Table) {
        let g = self.generation.load(Ordering::Acquire);
        (g, self.table(g))
    }

    fn target(&self, g: usize) -> Option<&Table> {
        if g + 1 >= MAX_GENERATIONS {
            return None;
        }
        let p = self.tables[g + 1].load(Ordering::Acquire);
        // SAFETY: as in `table`.
        (!p.is_null()).then(|| unsafe { &*p })
    }

    /// Parameters of the current table.
    pub fn params(&self) -> FilterParams {
        self.current().1.qt.params
    }

    /// Parameters the filter was created with; they fix the fingerprint
    /// length.
    pub fn base_params(&self) -> FilterParams {
        self.base
    }

    pub fn config(&self) -> ConcurrentConfig {
        self.config
    }

    /// Number of completed growing steps.
    pub fn generation(&self) -> usize {
        self.generation.load(Ordering::Acquire)
    }

    pub fn is_migrating(&self) -> bool {
        self.target(self.generation()).is_some()
    }

    /// Elements in the current table. Exact when quiescent.
    pub fn len(&self) -> usize {
        self.current().1.count.load(Ordering::Relaxed)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.params().slots()
    }

    pub fn fill_degree(&self) -> f64 {
        let (_, t) = self.current();
        t.count.load(Ordering::Relaxed) as f64 / t.qt.params.slots() as f64
    }

    /// `n * 2^-k`, the bound on the false positive rate.
    pub fn fpr_estimate(&self) -> f64 {
        self.len() as f64 * crate::fingerprint::pow2(-(self.base.fingerprint_bits() as i32))
    }

    /// Fingerprint under the base parameters.
    pub fn fingerprint<K: Key + ?Sized>(&self, key: &K) -> Fingerprint {
        make_fingerprint(key, &self.base)
    }

    pub fn insert<K: Key + ?Sized>(&self, key: &K) -> Result<()> {
        self.insert_value(self.fingerprint(key).value(&self.base), &())
    }

    /// Like [`insert`](Self::insert), reporting every lock taken to `obs`.
    pub fn insert_observed<K: Key + ?Sized, O: LockObserver>(&self, key: &K, obs: &O) -> Result<()> {
        self.insert_value(self.fingerprint(key).value(&self.base), obs)
    }

    pub fn contains<K: Key + ?Sized>(&self, key: &K) -> bool {
        self.contains_value(self.fingerprint(key).value(&self.base), &())
    }

    pub fn contains_observed<K: Key + ?Sized, O: LockObserver>(&self, key: &K, obs: &O) -> bool {
        self.contains_value(self.fingerprint(key).value(&self.base), obs)
    }

    /// Inserts a fingerprint given under the base parameters.
    pub fn insert_fingerprint(&self, fp: Fingerprint) -> Result<()> {
        self.check_fp(&fp)?;
        self.insert_value(fp.value(&self.base), &())
    }

    pub fn contains_fingerprint(&self, fp: Fingerprint) -> bool {
        self.check_fp(&fp).is_ok() && self.contains_value(fp.value(&self.base), &())
    }

    fn check_fp(&self, fp: &Fingerprint) -> Result<()> {
        if fp.quotient >= self.base.slots() as u64 || fp.remainder > crate::fingerprint::low_mask(self.base.remainder_bits())
        {
            return Err(Error::InvalidParams("fingerprint does not match filter parameters"));
        }
        Ok(())
    }

    fn can_grow(&self, g: usize, t: &Table) -> bool {
        self.config.growing
            && g + 1 < MAX_GENERATIONS
            && t.qt.params.quotient_bits() < self.config.max_quotient_bits
            && t.qt.params.grown().is_ok()
    }

    pub(crate) fn insert_value<O: LockObserver>(&self, value: u64, obs: &O) -> Result<()> {
        loop {
            let (g, t) = self.current();
            if self.target(g).is_some() {
                self.help(g, usize::MAX);
                continue;
            }
            let m = t.qt.params.slots() as f64;
            let n = t.count.load(Ordering::Relaxed) as f64;
            let growable = self.can_grow(g, t);
            if growable && n >= self.config.grow_at * m {
                self.start_growth(g, t);
                continue;
            }
            if !growable && n + 1.0 > HARD_FILL_CAP * m {
                return Err(Error::TableFull);
            }
            let fp = Fingerprint::from_value(value, &t.qt.params);
            match t.insert(fp, obs) {
                Ok(()) => {
                    t.count.fetch_add(1, Ordering::Relaxed);
                    return Ok(());
                }
                Err(Abort::Migrating) => {
                    self.help(g, usize::MAX);
                }
                Err(Abort::Full) if growable => self.start_growth(g, t),
                Err(Abort::Full) => return Err(Error::TableFull),
            }
        }
    }

    pub(crate) fn contains_value<O: LockObserver>(&self, value: u64, obs: &O) -> bool {
        let (_, t) = self.current();
        t.query(Fingerprint::from_value(value, &t.qt.params), obs)
    }

    /// Lock-free query of the current table; only correct while no insert
    /// can move elements.
    pub(crate) fn contains_value_unlocked(&self, value: u64) -> bool {
        let (_, t) = self.current();
        let fp = Fingerprint::from_value(value, &t.qt.params);
        t.qt.query_unlocked(fp.quotient as usize, fp.remainder)
    }

    /// Whether the canonical slot of `value` is empty in the current table.
    pub(crate) fn canonical_empty_value(&self, value: u64) -> bool {
        let (_, t) = self.current();
        t.canonical_empty(Fingerprint::from_value(value, &t.qt.params))
    }

    /// Stores `value` with a single compare-exchange if its canonical slot
    /// is empty and no migration is running.
    pub(crate) fn try_claim_value(&self, value: u64) -> bool {
        let (g, t) = self.current();
        if self.target(g).is_some() {
            return false;
        }
        let claimed = t.try_trivial_insert(Fingerprint::from_value(value, &t.qt.params));
        if claimed {
            t.count.fetch_add(1, Ordering::Relaxed);
        }
        claimed
    }

    /// Makes sure the table of generation `g + 1` exists.
    fn allocate_target(&self, g: usize, t: &Table) {
        if t.target_claimed
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
        {
            let params = t.qt.params.grown().expect("checked by can_grow");
            let qt = QTable::new(params, Scheme::ThreeBit).expect("grown parameters are valid");
            self.tables[g + 1].store(Box::into_raw(Box::new(Table::new(qt, 0))), Ordering::Release);
        }
    }

    fn start_growth(&self, g: usize, t: &Table) {
        self.allocate_target(g, t);
        self.help(g, usize::MAX);
    }

    /// Migrates up to `limit` blocks of the migration out of generation `g`.
    /// With an unlimited budget, returns only after the migration finished.
    fn help(&self, g: usize, limit: usize) -> usize {
        let src = self.table(g);
        let mut backoff = Backoff::new();
        let dst = loop {
            if self.generation.load(Ordering::Acquire) > g {
                return 0;
            }
            match self.target(g) {
                Some(dst) => break dst,
                None => backoff.snooze(),
            }
        };
        let blocks = src.blocks();
        let mut done = 0;
        while done < limit {
            let b = src.next_block.fetch_add(1, Ordering::AcqRel);
            if b >= blocks {
                break;
            }
            src.migrate_block(dst, b);
            done += 1;
            if src.done_blocks.fetch_add(1, Ordering::AcqRel) + 1 == blocks {
                self.generation.store(g + 1, Ordering::Release);
            }
        }
        if limit == usize::MAX {
            let mut backoff = Backoff::new();
            while self.generation.load(Ordering::Acquire) == g {
                backoff.snooze();
            }
        }
        done
    }

    /// Runs one growing step to completion. Fails if the configuration or
    /// the remainder width forbid growing.
    pub fn grow(&self) -> Result<()> {
        let (g, t) = self.current();
        if self.target(g).is_none() {
            if !self.can_grow(g, t) {
                return Err(if t.qt.params.remainder_bits() < 2 {
                    Error::RemainderExhausted
                } else {
                    Error::Unsupported("growing is disabled or at its limit")
                });
            }
            self.start_growth(g, t);
        } else {
            self.help(g, usize::MAX);
        }
        Ok(())
    }

    /// Allocates the next table without migrating anything. Returns whether
    /// a migration is now in progress.
    pub fn begin_growth(&self) -> bool {
        let (g, t) = self.current();
        if self.can_grow(g, t) {
            self.allocate_target(g, t);
            let mut backoff = Backoff::new();
            while self.target(g).is_none() && self.generation() == g {
                backoff.snooze();
            }
        }
        self.target(self.generation()).is_some()
    }

    /// Claims and migrates at most `limit` blocks of a running migration.
    /// Returns the number of blocks this call migrated.
    pub fn migrate_blocks(&self, limit: usize) -> usize {
        let g = self.generation();
        if self.target(g).is_none() {
            return 0;
        }
        self.help(g, limit.min(usize::MAX - 1))
    }

    /// Copy of the current table's group words. Only meaningful when the
    /// filter is quiescent and not migrating.
    pub fn words(&self) -> Vec<u64> {
        self.current().1.qt.table.snapshot()
    }

    pub fn slot_code(&self, i: usize) -> u64 {
        self.current().1.qt.get(i)
    }

    /// Checks lock hygiene, run structure and the element count of the
    /// current table. Only meaningful when the filter is quiescent.
    pub fn check_invariants(&self) -> core::result::Result<(), &'static str> {
        if self.is_migrating() {
            return Err("migration in progress");
        }
        let (_, t) = self.current();
        check_table(&t.qt, Some(t.count.load(Ordering::Relaxed)))
    }

    /// Sequential copy of the current table.
    pub fn to_sequential(&self) -> Result<QuotientFilter> {
        let (_, t) = self.current();
        QuotientFilter::from_raw_parts(t.qt.params, Variant::ThreeBit, t.count.load(Ordering::Relaxed), &t.qt.table.snapshot())
    }

    /// Group loads and compare-exchanges on the current table.
    #[cfg(feature = "instrument")]
    pub fn accesses(&self) -> u64 {
        self.current().1.qt.table.accesses()
    }

    #[cfg(feature = "instrument")]
    pub fn reset_accesses(&self) {
        self.current().1.qt.table.reset_accesses()
    }
}

impl Drop for ConcurrentQf {
    fn drop(&mut self) {
        for slot in &self.tables {
            let p = slot.swap(ptr::null_mut(), Ordering::AcqRel);
            if !p.is_null() {
                // SAFETY: allocated by `Box::into_raw`, and `&mut self`
                // excludes other users.
                drop(unsafe { Box::from_raw(p) });
            }
        }
    }
}

impl core::fmt::Debug for ConcurrentQf {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ConcurrentQf")
            .field("params", &self.params())
            .field("generation", &self.generation())
            .field("len", &self.len())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use std::sync::{Arc, Mutex};
    use std::thread;

    fn params(q: u32, r: u32) -> FilterParams {
        FilterParams::new(q, r).unwrap()
    }

    fn fixed(q: u32, r: u32) -> ConcurrentQf {
        ConcurrentQf::new(params(q, r), ConcurrentConfig::fixed()).unwrap()
    }

    fn sequential(p: FilterParams, values: &[u64]) -> QuotientFilter {
        let mut f = QuotientFilter::new(p, Variant::ThreeBit).unwrap();
        for &v in values {
            f.insert_fingerprint(Fingerprint::from_value(v, &p)).unwrap();
        }
        f
    }

    fn random_values(rng: &mut StdRng, k: u32, n: usize) -> Vec<u64> {
        (0..n).map(|_| rng.gen::<u64>() & ((1 << k) - 1)).collect()
    }

    fn parallel_insert(f: &Arc<ConcurrentQf>, values: &[u64], threads: usize) {
        let chunks: Vec<Vec<u64>> = values.chunks(values.len().div_ceil(threads).max(1)).map(|c| c.to_vec()).collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| {
                let f = Arc::clone(f);
                thread::spawn(move || {
                    for v in chunk {
                        f.insert_value(v, &()).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
    }

    #[test]
    fn trivial_insert_writes_cluster_start() {
        let f = fixed(6, 8);
        f.insert_fingerprint(Fingerprint { quotient: 5, remainder: 77 }).unwrap();
        assert_eq!(f.slot_code(5), (77 << 3) | CLUSTER_START);
        assert!(f.contains_fingerprint(Fingerprint { quotient: 5, remainder: 77 }));
        assert!(!f.contains_fingerprint(Fingerprint { quotient: 4, remainder: 77 }));
        f.check_invariants().unwrap();
    }

    #[test]
    fn shift_across_cluster_start() {
        // cluster at 1 (two elements) runs into the cluster start at 3
        let p = params(5, 6);
        let f = fixed(5, 6);
        let fps = [(1, 4), (1, 9), (3, 2), (1, 1)];
        for (q, r) in fps {
            f.insert_fingerprint(Fingerprint { quotient: q, remainder: r }).unwrap();
        }
        let seq = sequential(p, &fps.map(|(q, r)| (q << 6) | r));
        assert_eq!(f.words(), seq.words());
        let code3 = f.slot_code(3);
        assert_eq!(code3 & 0b001, 0b001, "element at slot 3 is shifted");
        for (q, r) in fps {
            assert!(f.contains_fingerprint(Fingerprint { quotient: q, remainder: r }));
        }
        f.check_invariants().unwrap();
    }

    #[test]
    fn single_thread_matches_sequential() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..20 {
            let p = params(9, 6);
            let values = random_values(&mut rng, 15, 460);
            let f = fixed(9, 6);
            for &v in &values {
                f.insert_value(v, &()).unwrap();
            }
            assert_eq!(f.words(), sequential(p, &values).words());
            f.check_invariants().unwrap();
            assert!(values.iter().all(|&v| f.contains_value(v, &())));
        }
    }

    #[test]
    fn parallel_inserts_are_bit_identical() {
        let mut rng = StdRng::seed_from_u64(2);
        for threads in [2, 4, 8] {
            for _ in 0..5 {
                let p = params(12, 5);
                let mut values = random_values(&mut rng, 17, 3600);
                let expect = sequential(p, &values).words();
                values.shuffle(&mut rng);
                let f = Arc::new(fixed(12, 5));
                parallel_insert(&f, &values, threads);
                assert_eq!(f.words(), expect);
                assert_eq!(f.len(), values.len());
                f.check_invariants().unwrap();
            }
        }
    }

    #[test]
    fn fill_degree_counts() {
        let f = fixed(8, 8);
        assert_eq!(f.fill_degree(), 0.0);
        for k in 0..100u64 {
            f.insert(&k).unwrap();
        }
        assert_eq!(f.fill_degree(), 100.0 / 256.0);
    }

    #[test]
    fn fixed_table_refuses_past_cap() {
        let f = fixed(6, 8);
        let mut k = 0u64;
        while f.insert(&k).is_ok() {
            k += 1;
        }
        assert_eq!(f.len(), 60, "0.95 * 64 = 60.8");
    }

    #[test]
    fn grow_matches_rebased_build() {
        let mut rng = StdRng::seed_from_u64(3);
        let p = params(13, 9);
        let values = random_values(&mut rng, 22, 6000);
        let f = fixed(13, 9);
        for &v in &values {
            f.insert_value(v, &()).unwrap();
        }
        // fixed config refuses to grow
        assert!(f.grow().is_err());
        let f = ConcurrentQf::new(p, ConcurrentConfig::default().with_grow_at(0.95)).unwrap();
        for &v in &values {
            f.insert_value(v, &()).unwrap();
        }
        f.grow().unwrap();
        assert_eq!(f.generation(), 1);
        assert_eq!(f.params().quotient_bits(), 14);
        assert_eq!(f.words(), sequential(params(14, 8), &values).words());
        assert_eq!(f.len(), values.len());
        assert!(values.iter().all(|&v| f.contains_value(v, &())));
    }

    #[test]
    fn block_i_feeds_target_blocks_2i_and_2i_plus_1() {
        let mut rng = StdRng::seed_from_u64(4);
        let values = random_values(&mut rng, 24, 9000);
        let f = ConcurrentQf::new(params(14, 10), ConcurrentConfig::default().with_grow_at(0.95)).unwrap();
        for &v in &values {
            f.insert_value(v, &()).unwrap();
        }
        assert!(f.begin_growth());
        let dst = f.target(0).unwrap();
        let filled = |dst: &Table| -> Vec<usize> { (0..dst.qt.slots()).filter(|&i| dst.qt.get(i) != 0).collect() };
        let mut before = filled(dst);
        for b in 0..f.table(0).blocks() {
            assert_eq!(f.migrate_blocks(1), 1);
            let now = filled(dst);
            let lo = 2 * b * MIGRATION_BLOCK_SLOTS;
            let hi = 2 * (b + 1) * MIGRATION_BLOCK_SLOTS + 64;
            let fresh = now.iter().filter(|i| before.binary_search(i).is_err());
            if lo < f.table(0).qt.params.slots() * 2 {
                assert!(fresh.clone().count() > 0);
            }
            assert!(fresh.copied().all(|i| i >= lo && i < hi), "block {b} wrote outside [{lo}, {hi})");
            before = now;
        }
        assert_eq!(f.generation(), 1);
        assert_eq!(f.words(), sequential(params(15, 9), &values).words());
    }

    #[test]
    fn insert_helps_a_paused_migration() {
        let mut rng = StdRng::seed_from_u64(5);
        let values = random_values(&mut rng, 22, 5000);
        let f = Arc::new(ConcurrentQf::new(params(13, 9), ConcurrentConfig::default().with_grow_at(0.95)).unwrap());
        for &v in &values {
            f.insert_value(v, &()).unwrap();
        }
        assert!(f.begin_growth());
        // the "paused migrator" sealed and copied block 0 only
        assert_eq!(f.migrate_blocks(1), 1);
        assert_eq!(f.generation(), 0);
        // canonical slot 10 lies in the sealed block
        let fresh = (10u64 << 9) | 3;
        let sealed = Fingerprint::from_value(fresh, &params(13, 9));
        assert!(matches!(f.table(0).insert(sealed, &()), Err(Abort::Migrating)));
        let g = Arc::clone(&f);
        thread::spawn(move || g.insert_value(fresh, &()).unwrap()).join().unwrap();
        assert_eq!(f.generation(), 1);
        assert!(f.contains_value(fresh, &()));
        assert!(values.iter().all(|&v| f.contains_value(v, &())));
        let mut all = values.clone();
        all.push(fresh);
        assert_eq!(f.words(), sequential(params(14, 8), &all).words());
    }

    #[test]
    fn queries_see_old_table_during_migration() {
        let mut rng = StdRng::seed_from_u64(6);
        let values = random_values(&mut rng, 22, 5000);
        let f = ConcurrentQf::new(params(13, 9), ConcurrentConfig::default().with_grow_at(0.95)).unwrap();
        for &v in &values {
            f.insert_value(v, &()).unwrap();
        }
        f.begin_growth();
        f.migrate_blocks(2);
        assert!(values.iter().all(|&v| f.contains_value(v, &())));
        f.grow().unwrap();
        assert!(values.iter().all(|&v| f.contains_value(v, &())));
    }

    #[test]
    fn concurrent_growth_loses_nothing() {
        for seed in 0..4u64 {
            let mut rng = StdRng::seed_from_u64(100 + seed);
            let values = random_values(&mut rng, 24, 40_000);
            let f = Arc::new(ConcurrentQf::new(params(12, 12), ConcurrentConfig::default()).unwrap());
            parallel_insert(&f, &values, 8);
            assert!(f.generation() >= 3);
            assert_eq!(f.len(), values.len());
            f.check_invariants().unwrap();
            let final_params = f.params();
            assert_eq!(f.words(), sequential(final_params, &values).words());
        }
    }

    #[derive(Default)]
    struct Recorder(Mutex<Vec<LockEvent>>);

    impl LockObserver for Recorder {
        fn observe(&self, event: LockEvent) {
            self.0.lock().unwrap().push(event);
        }
    }

    /// An insert takes at most one write lock and at most one read lock,
    /// the read lock strictly after the write lock, and releases both.
    fn check_insert_events(events: &[LockEvent]) {
        use LockEvent::*;
        match events {
            [] => {}
            [WriteAcquired(a), WriteReleased(b)] => assert_eq!(a, b),
            [WriteAcquired(w), ReadAcquired(r), WriteReleased(w2), ReadReleased(r2)] => {
                assert_eq!(w, w2);
                assert_eq!(r, r2);
                assert!(r < w);
            }
            other => panic!("bad lock sequence {other:?}"),
        }
    }

    #[test]
    fn lock_order_under_contention() {
        let f = Arc::new(fixed(10, 6));
        let handles: Vec<_> = (0..4u64)
            .map(|t| {
                let f = Arc::clone(&f);
                thread::spawn(move || {
                    let mut rng = StdRng::seed_from_u64(t);
                    for _ in 0..200 {
                        // crowd into few quotients to force locking
                        let v = (rng.gen_range(0..64u64) << 6) | rng.gen_range(0..64u64);
                        let rec = Recorder::default();
                        if rng.gen_bool(0.5) {
                            f.insert_value(v, &rec).unwrap();
                            check_insert_events(&rec.0.lock().unwrap());
                        } else {
                            f.contains_value(v, &rec);
                            let ev = rec.0.lock().unwrap();
                            assert!(matches!(
                                ev.as_slice(),
                                [] | [LockEvent::ReadAcquired(_), LockEvent::ReadReleased(_)]
                            ));
                        }
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        f.check_invariants().unwrap();
    }

    #[test]
    fn racing_queriers_both_answer() {
        let f = Arc::new(fixed(8, 8));
        for r in 1..=40u64 {
            f.insert_value((7 << 8) | r, &()).unwrap();
        }
        let handles: Vec<_> = (0..2)
            .map(|_| {
                let f = Arc::clone(&f);
                thread::spawn(move || (0..2000).all(|i| f.contains_value((7 << 8) | (1 + i % 40), &())))
            })
            .collect();
        for h in handles {
            assert!(h.join().unwrap());
        }
        f.check_invariants().unwrap();
    }

    #[test]
    fn mixed_stress_no_false_negatives() {
        let f = Arc::new(ConcurrentQf::new(params(11, 14), ConcurrentConfig::default()).unwrap());
        let handles: Vec<_> = (0..4u64)
            .map(|t| {
                let f = Arc::clone(&f);
                thread::spawn(move || {
                    let mut rng = StdRng::seed_from_u64(t + 50);
                    let mut mine = Vec::new();
                    for _ in 0..20_000 {
                        if rng.gen_bool(0.5) || mine.is_empty() {
                            let v = rng.gen::<u64>() & ((1 << 25) - 1);
                            f.insert_value(v, &()).unwrap();
                            mine.push(v);
                        } else {
                            let v = mine[rng.gen_range(0..mine.len())];
                            assert!(f.contains_value(v, &()), "false negative");
                        }
                    }
                    mine
                })
            })
            .collect();
        let all: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        assert_eq!(f.len(), all.len());
        f.check_invariants().unwrap();
        assert!(all.iter().all(|&v| f.contains_value(v, &())));
    }

    #[test]
    fn raw_parts_round_trip() {
        let f = fixed(9, 7);
        for k in 0..300u64 {
            f.insert(&k).unwrap();
        }
        let g = ConcurrentQf::from_raw_parts(f.params(), ConcurrentConfig::fixed(), 300, &f.words()).unwrap();
        assert!((0..300u64).all(|k| g.contains(&k)));
        assert!(ConcurrentQf::from_raw_parts(f.params(), ConcurrentConfig::fixed(), 299, &f.words()).is_err());
        let mut words = f.words();
        words[0] |= 0b010;
        assert!(ConcurrentQf::from_raw_parts(f.params(), ConcurrentConfig::fixed(), 300, &words).is_err());
    }

    #[cfg(feature = "instrument")]
    #[test]
    fn fast_paths_touch_one_group() {
        let f = fixed(12, 8);
        let t = f.current().1;
        t.qt.table.reset_accesses();
        f.insert_fingerprint(Fingerprint { quotient: 100, remainder: 3 }).unwrap();
        assert_eq!(t.qt.table.accesses(), 2);
        t.qt.table.reset_accesses();
        assert!(!f.contains_fingerprint(Fingerprint { quotient: 300, remainder: 3 }));
        assert_eq!(t.qt.table.accesses(), 1);
        t.qt.table.reset_accesses();
        assert!(f.contains_fingerprint(Fingerprint { quotient: 100, remainder: 3 }));
        assert_eq!(t.qt.table.accesses(), 1);
    }
}
