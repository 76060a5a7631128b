//! Fully expandable filter: a stack of concurrent levels.
//!
//! Level `i` has `2^i` times the final capacity of level 0 and fingerprints
//! that are `2i` bits longer, so its false positive budget is half that of
//! the level before. The budgets form a geometric series whose sum stays
//! below twice the budget of level 0, which is chosen under the user bound.
//!
//! Only the newest level takes ordinary inserts. A new level starts at one
//! eighth of its final slot count with three extra remainder bits, and
//! reaches its final size through three bounded-growing steps.
//!
//! In cascading mode an insert first tries to claim the empty canonical
//! slot of each older level, oldest first, with a single compare-exchange.
//! Claims never move stored elements, and a query may stop at the first
//! older level whose canonical slot is empty.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::ptr;
use core::sync::atomic::{AtomicBool, AtomicPtr, AtomicUsize, Ordering};

use crate::backoff::Backoff;
use crate::concurrent::{ConcurrentConfig, ConcurrentQf, DEFAULT_GROW_AT, HARD_FILL_CAP};
use crate::error::{Error, Result};
use crate::fingerprint::{pow2, FilterParams, Key, MAX_QUOTIENT_BITS};

/// A new level starts with `final slots >> LEVEL_START_SHIFT` slots.
pub const LEVEL_START_SHIFT: u32 = 3;
/// Largest remainder width level 0 may need.
pub const MAX_BASE_REMAINDER_BITS: u32 = 58;

const MAX_LEVELS: usize = 32;
const LEVEL_SEED_STEP: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpandableConfig {
    /// Expected number of elements.
    pub capacity: usize,
    /// Upper bound on the false positive rate.
    pub fpr_bound: f64,
    /// Fill degree that triggers growing inside a level and the hand-off
    /// to a new level.
    pub grow_at: f64,
    pub cascading: bool,
    pub seed: u64,
}

impl ExpandableConfig {
    pub fn new(capacity: usize, fpr_bound: f64) -> Self {
        ExpandableConfig {
            capacity,
            fpr_bound,
            grow_at: DEFAULT_GROW_AT,
            cascading: false,
            seed: 0,
        }
    }

    pub fn with_cascading(mut self, on: bool) -> Self {
        self.cascading = on;
        self
    }

    pub fn with_grow_at(mut self, grow_at: f64) -> Self {
        self.grow_at = grow_at;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Quotient and remainder bits of level 0.
    pub fn base_bits(&self) -> Result<(u32, u32)> {
        if self.capacity == 0 {
            return Err(Error::InvalidParams("capacity must be at least 1"));
        }
        if !(self.fpr_bound > 0.0 && self.fpr_bound < 1.0) {
            return Err(Error::InvalidParams("fpr bound must be in (0, 1)"));
        }
        if !(self.grow_at > 0.0 && self.grow_at <= HARD_FILL_CAP) {
            return Err(Error::InvalidParams("grow_at must be in (0, 0.95]"));
        }
        let c = self.capacity as f64;
        let q = (1..=MAX_QUOTIENT_BITS)
            .find(|&q| self.grow_at * pow2(q as i32) > c)
            .ok_or(Error::InvalidParams("capacity too large"))?;
        let r = (1..=MAX_BASE_REMAINDER_BITS)
            .find(|&r| self.fpr_bound > 2.0 * self.grow_at * pow2(-(r as i32)))
            .ok_or(Error::InvalidParams("fpr bound needs too many remainder bits"))?;
        Ok((q, r))
    }

    /// Final-size parameters of level `i`.
    pub fn level_info(&self, i: usize) -> Result<LevelInfo> {
        let (q0, r0) = self.base_bits()?;
        let q = q0 as usize + i;
        let r = r0 as usize + i;
        if q > MAX_QUOTIENT_BITS as usize || q + r > 64 || i >= MAX_LEVELS {
            return Err(Error::LevelLimit);
        }
        let (q, r) = (q as u32, r as u32);
        let max_elements = self.grow_at * pow2(q as i32);
        Ok(LevelInfo {
            index: i,
            quotient_bits: q,
            remainder_bits: r,
            fingerprint_bits: q + r,
            max_elements,
            fpr_budget: max_elements * pow2(-((q + r) as i32)),
        })
    }

    fn level_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(LEVEL_SEED_STEP.wrapping_mul(i as u64))
    }

    /// Parameters a level is created with.
    fn level_start(&self, info: &LevelInfo) -> Result<FilterParams> {
        let shift = if info.index == 0 {
            0
        } else {
            LEVEL_START_SHIFT.min(info.quotient_bits - 1)
        };
        FilterParams::new(info.quotient_bits - shift, info.remainder_bits + shift)
            .map(|p| p.with_seed(self.level_seed(info.index)))
            .map_err(|_| Error::LevelLimit)
    }

    fn level_config(&self, info: &LevelInfo) -> ConcurrentConfig {
        ConcurrentConfig::default()
            .with_grow_at(self.grow_at)
            .with_max_quotient_bits(info.quotient_bits)
    }
}

/// Final-size parameters and budgets of one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelInfo {
    pub index: usize,
    pub quotient_bits: u32,
    pub remainder_bits: u32,
    pub fingerprint_bits: u32,
    /// Elements at which the level hands off to the next one.
    pub max_elements: f64,
    /// `max_elements * 2^-fingerprint_bits`.
    pub fpr_budget: f64,
}

/// Live state of one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStats {
    pub info: LevelInfo,
    /// Current quotient bits; below the final value while still growing.
    pub quotient_bits: u32,
    pub len: usize,
    pub fill_degree: f64,
}

/// Sum of the live level budgets, and its closed-form bound `2 * p_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FprBound {
    pub sum: f64,
    pub closed_form: f64,
}

struct Level {
    filter: ConcurrentQf,
    info: LevelInfo,
    writers: AtomicUsize,
    retired: AtomicBool,
    successor_claimed: AtomicBool,
}

impl Level {
    fn value<K: Key + ?Sized>(&self, key: &K) -> u64 {
        let base = self.filter.base_params();
        self.filter.fingerprint(key).value(&base)
    }

    fn handoff_due(&self) -> bool {
        self.filter.params().quotient_bits() == self.info.quotient_bits
            && self.filter.len() as f64 >= self.info.max_elements
    }

    /// Retired levels without unfinished writers can be read without locks.
    fn contains_value(&self, v: u64) -> bool {
        if self.retired.load(Ordering::SeqCst) && self.writers.load(Ordering::SeqCst) == 0 {
            self.filter.contains_value_unlocked(v)
        } else {
            self.filter.contains_value(v, &())
        }
    }
}

pub struct ExpandableQf {
    config: ExpandableConfig,
    levels: [AtomicPtr<Level>; MAX_LEVELS],
    live: AtomicUsize,
}

// SAFETY: levels are only reached through atomics and are freed in `drop`.
unsafe impl Send for ExpandableQf {}
unsafe impl Sync for ExpandableQf {}

impl ExpandableQf {
    pub fn new(config: ExpandableConfig) -> Result<Self> {
        let info = config.level_info(0)?;
        let filter = ConcurrentQf::new(config.level_start(&info)?, config.level_config(&info))?;
        Ok(Self::from_parts(config, alloc::vec![(filter, info)]))
    }

    fn from_parts(config: ExpandableConfig, levels: Vec<(ConcurrentQf, LevelInfo)>) -> Self {
        let slots: [AtomicPtr<Level>; MAX_LEVELS] = core::array::from_fn(|_| AtomicPtr::new(ptr::null_mut()));
        let n = levels.len();
        for (i, (filter, info)) in levels.into_iter().enumerate() {
            let level = Level {
                filter,
                info,
                writers: AtomicUsize::new(0),
                retired: AtomicBool::new(i + 1 < n),
                successor_claimed: AtomicBool::new(i + 1 < n),
            };
            slots[i].store(Box::into_raw(Box::new(level)), Ordering::Release);
        }
        ExpandableQf {
            config,
            levels: slots,
            live: AtomicUsize::new(n),
        }
    }

    /// Rebuilds a filter from its per-level filters, oldest first.
    pub fn from_level_filters(config: ExpandableConfig, filters: Vec<ConcurrentQf>) -> Result<Self> {
        if filters.is_empty() || filters.len() > MAX_LEVELS {
            return Err(Error::Corrupt("level count out of range"));
        }
        let mut levels = Vec::with_capacity(filters.len());
        for (i, filter) in filters.into_iter().enumerate() {
            let info = config.level_info(i)?;
            let p = filter.params();
            if p.fingerprint_bits() != info.fingerprint_bits
                || p.quotient_bits() > info.quotient_bits
                || p.seed() != config.level_seed(i)
                || filter.config().max_quotient_bits != info.quotient_bits
            {
                return Err(Error::Corrupt("level parameters do not match the configuration"));
            }
            levels.push((filter, info));
        }
        Ok(Self::from_parts(config, levels))
    }

    /// Filter configuration for level `i`, as needed to restore it.
    pub fn level_filter_config(&self, i: usize) -> Result<ConcurrentConfig> {
        Ok(self.config.level_config(&self.config.level_info(i)?))
    }

    pub fn config(&self) -> &ExpandableConfig {
        &self.config
    }

    fn level(&self, i: usize) -> &Level {
        let p = self.levels[i].load(Ordering::Acquire);
        debug_assert!(!p.is_null());
        // SAFETY: levels below `live` are published and only freed in `drop`.
        unsafe { &*p }
    }

    pub fn level_count(&self) -> usize {
        self.live.load(Ordering::Acquire)
    }

    /// The filter of level `i`, oldest first.
    pub fn level_filter(&self, i: usize) -> Option<&ConcurrentQf> {
        (i < self.level_count()).then(|| &self.level(i).filter)
    }

    pub fn levels(&self) -> Vec<LevelStats> {
        (0..self.level_count())
            .map(|i| {
                let l = self.level(i);
                LevelStats {
                    info: l.info,
                    quotient_bits: l.filter.params().quotient_bits(),
                    len: l.filter.len(),
                    fill_degree: l.filter.fill_degree(),
                }
            })
            .collect()
    }

    /// Total number of stored elements over all levels.
    pub fn len(&self) -> usize {
        (0..self.level_count()).map(|i| self.level(i).filter.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fpr_bound(&self) -> FprBound {
        let n = self.level_count();
        let sum = (0..n).map(|i| self.level(i).info.fpr_budget).sum();
        FprBound {
            sum,
            closed_form: 2.0 * self.level(0).info.fpr_budget,
        }
    }

    /// Appends the level after `a` unless another thread already did.
    fn add_level(&self, a: usize) -> Result<()> {
        let old = self.level(a);
        if old
            .successor_claimed
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
        {
            let made = self.config.level_info(a + 1).and_then(|info| {
                let params = self.config.level_start(&info)?;
                let filter =
                    ConcurrentQf::new(params, self.config.level_config(&info)).map_err(|_| Error::LevelLimit)?;
                Ok((filter, info))
            });
            let (filter, info) = match made {
                Ok(level) => level,
                Err(e) => {
                    old.successor_claimed.store(false, Ordering::Release);
                    return Err(e);
                }
            };
            let level = Level {
                filter,
                info,
                writers: AtomicUsize::new(0),
                retired: AtomicBool::new(false),
                successor_claimed: AtomicBool::new(false),
            };
            self.levels[a + 1].store(Box::into_raw(Box::new(level)), Ordering::Release);
            self.live.store(a + 2, Ordering::SeqCst);
            old.retired.store(true, Ordering::SeqCst);
            return Ok(());
        }
        let mut backoff = Backoff::new();
        while self.live.load(Ordering::Acquire) <= a + 1 {
            if !old.successor_claimed.load(Ordering::Acquire) {
                // the creator failed; let the caller retry and see the error
                return Ok(());
            }
            backoff.snooze();
        }
        Ok(())
    }

    pub fn insert<K: Key + ?Sized>(&self, key: &K) -> Result<()> {
        if self.config.cascading && self.claim_lower(key) {
            return Ok(());
        }
        self.insert_active(key)
    }

    /// Cascading step: claims the empty canonical slot of the oldest
    /// retired level that has one.
    fn claim_lower<K: Key + ?Sized>(&self, key: &K) -> bool {
        let active = self.level_count() - 1;
        (0..active).any(|i| {
            let l = self.level(i);
            let v = l.value(key);
            l.filter.canonical_empty_value(v) && l.filter.try_claim_value(v)
        })
    }

    fn insert_active<K: Key + ?Sized>(&self, key: &K) -> Result<()> {
        loop {
            let a = self.level_count() - 1;
            let l = self.level(a);
            if l.handoff_due() {
                self.add_level(a)?;
                continue;
            }
            l.writers.fetch_add(1, Ordering::SeqCst);
            if l.retired.load(Ordering::SeqCst) {
                l.writers.fetch_sub(1, Ordering::SeqCst);
                continue;
            }
            let result = l.filter.insert(key);
            l.writers.fetch_sub(1, Ordering::SeqCst);
            match result {
                Ok(()) => return Ok(()),
                Err(Error::TableFull) => self.add_level(a)?,
                Err(e) => return Err(e),
            }
        }
    }

    /// Membership over all levels. In cascading mode the walk stops at the
    /// first retired level whose canonical slot is empty.
    pub fn contains<K: Key + ?Sized>(&self, key: &K) -> bool {
        self.contains_inner(key, self.config.cascading)
    }

    /// Membership over all levels without the early abort.
    pub fn contains_all_levels<K: Key + ?Sized>(&self, key: &K) -> bool {
        self.contains_inner(key, false)
    }

    /// Number of levels a query for `key` probes.
    pub fn levels_probed<K: Key + ?Sized>(&self, key: &K) -> usize {
        let n = self.level_count();
        if !self.config.cascading {
            return n;
        }
        for i in 0..n - 1 {
            let l = self.level(i);
            if l.filter.canonical_empty_value(l.value(key)) {
                return i + 1;
            }
        }
        n
    }

    fn contains_inner<K: Key + ?Sized>(&self, key: &K, early_abort: bool) -> bool {
        let n = self.level_count();
        for i in 0..n {
            let l = self.level(i);
            let v = l.value(key);
            if early_abort && i + 1 < n && l.filter.canonical_empty_value(v) {
                return false;
            }
            if l.contains_value(v) {
                return true;
            }
        }
        false
    }

    /// Inserts `key` unless it is already reported present. Returns whether
    /// it was present.
    pub fn query_or_insert<K: Key + ?Sized>(&self, key: &K) -> Result<bool> {
        let n = self.level_count();
        for i in 0..n - 1 {
            let l = self.level(i);
            let v = l.value(key);
            if self.config.cascading && l.filter.canonical_empty_value(v) && l.filter.try_claim_value(v) {
                return Ok(false);
            }
            if l.contains_value(v) {
                return Ok(true);
            }
        }
        let top = self.level(n - 1);
        if top.contains_value(top.value(key)) {
            return Ok(true);
        }
        self.insert_active(key)?;
        Ok(false)
    }
}

impl Drop for ExpandableQf {
    fn drop(&mut self) {
        for slot in &self.levels {
            let p = slot.swap(ptr::null_mut(), Ordering::AcqRel);
            if !p.is_null() {
                // SAFETY: allocated by `Box::into_raw`; `&mut self` is unique.
                drop(unsafe { Box::from_raw(p) });
            }
        }
    }
}

impl core::fmt::Debug for ExpandableQf {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ExpandableQf")
            .field("config", &self.config)
            .field("levels", &self.level_count())
            .field("len", &self.len())
            .finish()
    }
}
