//! A common interface over every filter the harness measures.

use std::sync::Mutex;

use clap::ValueEnum;
use qf_core::{
    lp_expected_fpr, ConcurrentConfig, ConcurrentQf, ExpandableConfig, ExpandableQf, FilterParams,
    LinearProbingQf, QuotientFilter, Variant,
};
use serde::Serialize;

use crate::bloom::BloomFilter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    /// sequential, three status bits
    Seq3,
    /// sequential, two status bits
    Seq2,
    /// linear probing, three extra remainder bits
    Lp,
    /// locally locked concurrent filter
    Concurrent,
    /// expandable filter
    Expandable,
    /// expandable filter with cascading inserts
    ExpandableCi,
    /// Bloom filter with the memory of a three-bit filter
    Bloom,
}

impl VariantKind {
    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Seq3 => "seq3",
            VariantKind::Seq2 => "seq2",
            VariantKind::Lp => "lp",
            VariantKind::Concurrent => "concurrent",
            VariantKind::Expandable => "expandable",
            VariantKind::ExpandableCi => "expandable-ci",
            VariantKind::Bloom => "bloom",
        }
    }

    /// Whether concurrent operations from several threads are supported.
    pub fn thread_safe(self) -> bool {
        !matches!(self, VariantKind::Seq3 | VariantKind::Seq2)
    }
}

/// What to build. `quotient_bits` and `remainder_bits` describe the
/// three-bit filter that sets the memory budget; the linear probing filter
/// adds three remainder bits and the Bloom filter gets the same bit count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub kind: VariantKind,
    pub quotient_bits: u32,
    pub remainder_bits: u32,
    pub seed: u64,
    /// Concurrent filter only: grow when full instead of failing.
    pub growing: bool,
    /// Expandable filters only.
    pub fpr_bound: f64,
}

impl FilterSpec {
    pub fn new(kind: VariantKind, quotient_bits: u32, remainder_bits: u32) -> Self {
        FilterSpec {
            kind,
            quotient_bits,
            remainder_bits,
            seed: 0,
            growing: false,
            fpr_bound: 1.0 / 1024.0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_growing(mut self, growing: bool) -> Self {
        self.growing = growing;
        self
    }

    pub fn with_fpr_bound(mut self, bound: f64) -> Self {
        self.fpr_bound = bound;
        self
    }

    pub fn slots(&self) -> usize {
        1 << self.quotient_bits
    }

    /// Expected capacity that makes level 0 of an expandable filter have
    /// `2^quotient_bits` slots.
    pub fn expandable_capacity(&self) -> usize {
        (qf_core::concurrent::DEFAULT_GROW_AT * (1u64 << (self.quotient_bits - 1)) as f64) as usize + 1
    }
}

/// Operations the harness needs from a filter.
pub trait Amq: Send + Sync {
    fn kind(&self) -> VariantKind;
    fn insert(&self, key: u64) -> Result<(), qf_core::Error>;
    fn contains(&self, key: u64) -> bool;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Slots of the current table; bits divided by `r + 3` for Bloom.
    fn slots(&self) -> usize;
    /// The analytic false positive rate at the current fill.
    fn analytic_fpr(&self) -> f64;
    /// Structural self-check; only called when no thread is working.
    fn check(&self) -> Result<(), String>;
    /// Number of expandable levels, if any.
    fn levels(&self) -> Option<usize> {
        None
    }
}

struct Sequential(Mutex<QuotientFilter>, VariantKind);

impl Amq for Sequential {
    fn kind(&self) -> VariantKind {
        self.1
    }
    fn insert(&self, key: u64) -> Result<(), qf_core::Error> {
        self.0.lock().unwrap().insert(&key)
    }
    fn contains(&self, key: u64) -> bool {
        self.0.lock().unwrap().contains(&key)
    }
    fn len(&self) -> usize {
        self.0.lock().unwrap().len()
    }
    fn slots(&self) -> usize {
        self.0.lock().unwrap().capacity()
    }
    fn analytic_fpr(&self) -> f64 {
        self.0.lock().unwrap().fpr_estimate()
    }
    fn check(&self) -> Result<(), String> {
        self.0.lock().unwrap().check_invariants().map_err(String::from)
    }
}

impl Amq for LinearProbingQf {
    fn kind(&self) -> VariantKind {
        VariantKind::Lp
    }
    fn insert(&self, key: u64) -> Result<(), qf_core::Error> {
        LinearProbingQf::insert(self, &key)
    }
    fn contains(&self, key: u64) -> bool {
        LinearProbingQf::contains(self, &key)
    }
    fn len(&self) -> usize {
        LinearProbingQf::len(self)
    }
    fn slots(&self) -> usize {
        self.capacity()
    }
    fn analytic_fpr(&self) -> f64 {
        lp_expected_fpr(self.fill_degree(), self.params().remainder_bits() - 3).unwrap_or(f64::NAN)
    }
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

impl Amq for ConcurrentQf {
    fn kind(&self) -> VariantKind {
        VariantKind::Concurrent
    }
    fn insert(&self, key: u64) -> Result<(), qf_core::Error> {
        ConcurrentQf::insert(self, &key)
    }
    fn contains(&self, key: u64) -> bool {
        ConcurrentQf::contains(self, &key)
    }
    fn len(&self) -> usize {
        ConcurrentQf::len(self)
    }
    fn slots(&self) -> usize {
        self.capacity()
    }
    fn analytic_fpr(&self) -> f64 {
        self.fpr_estimate()
    }
    fn check(&self) -> Result<(), String> {
        self.check_invariants().map_err(String::from)
    }
}

struct Expandable(ExpandableQf, VariantKind);

impl Amq for Expandable {
    fn kind(&self) -> VariantKind {
        self.1
    }
    fn insert(&self, key: u64) -> Result<(), qf_core::Error> {
        self.0.insert(&key)
    }
    fn contains(&self, key: u64) -> bool {
        self.0.contains(&key)
    }
    fn len(&self) -> usize {
        self.0.len()
    }
    fn slots(&self) -> usize {
        self.0.levels().iter().map(|l| 1usize << l.quotient_bits).sum()
    }
    fn analytic_fpr(&self) -> f64 {
        self.0
            .levels()
            .iter()
            .map(|l| l.len as f64 * 0.5f64.powi(l.info.fingerprint_bits as i32))
            .sum()
    }
    fn check(&self) -> Result<(), String> {
        let b = self.0.fpr_bound();
        if b.closed_form >= self.0.config().fpr_bound || b.sum > b.closed_form {
            return Err(format!("fpr bound violated: {b:?}"));
        }
        for i in 0..self.0.level_count() {
            self.0.level_filter(i).unwrap().check_invariants().map_err(|e| format!("level {i}: {e}"))?;
        }
        Ok(())
    }
    fn levels(&self) -> Option<usize> {
        Some(self.0.level_count())
    }
}

struct Bloom(BloomFilter, u32);

impl Amq for Bloom {
    fn kind(&self) -> VariantKind {
        VariantKind::Bloom
    }
    fn insert(&self, key: u64) -> Result<(), qf_core::Error> {
        self.0.insert(&key);
        Ok(())
    }
    fn contains(&self, key: u64) -> bool {
        self.0.contains(&key)
    }
    fn len(&self) -> usize {
        self.0.len()
    }
    fn slots(&self) -> usize {
        (self.0.bits() / (self.1 as u64 + 3)) as usize
    }
    fn analytic_fpr(&self) -> f64 {
        self.0.expected_fpr()
    }
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

pub fn build_filter(spec: &FilterSpec) -> Result<Box<dyn Amq>, qf_core::Error> {
    let q = spec.quotient_bits;
    let r = spec.remainder_bits;
    let params = FilterParams::new(q, r)?.with_seed(spec.seed);
    Ok(match spec.kind {
        VariantKind::Seq3 => Box::new(Sequential(
            Mutex::new(QuotientFilter::new(params, Variant::ThreeBit)?),
            spec.kind,
        )),
        VariantKind::Seq2 => Box::new(Sequential(
            Mutex::new(QuotientFilter::new(params, Variant::TwoBit)?),
            spec.kind,
        )),
        VariantKind::Lp => Box::new(LinearProbingQf::new(FilterParams::new(q, r + 3)?.with_seed(spec.seed))?),
        VariantKind::Concurrent => {
            let config = if spec.growing {
                ConcurrentConfig::default()
            } else {
                ConcurrentConfig::fixed()
            };
            Box::new(ConcurrentQf::new(params, config)?)
        }
        VariantKind::Expandable | VariantKind::ExpandableCi => {
            let config = ExpandableConfig::new(spec.expandable_capacity(), spec.fpr_bound)
                .with_seed(spec.seed)
                .with_cascading(spec.kind == VariantKind::ExpandableCi);
            Box::new(Expandable(ExpandableQf::new(config)?, spec.kind))
        }
        VariantKind::Bloom => Box::new(Bloom(BloomFilter::same_memory_as(1 << q, r, spec.seed), r)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variant_round_trips_keys() {
        for kind in VariantKind::value_variants() {
            let f = build_filter(&FilterSpec::new(*kind, 10, 8).with_seed(3)).unwrap();
            for k in 0..500u64 {
                f.insert(k).unwrap();
            }
            assert!((0..500u64).all(|k| f.contains(k)), "{}", kind.name());
            assert_eq!(f.len(), 500);
            assert_eq!(f.slots(), 1024, "{}", kind.name());
            f.check().unwrap();
            assert!(f.analytic_fpr() > 0.0);
        }
    }

    #[test]
    fn expandable_capacity_gives_requested_level_zero() {
        for q in [8, 13, 16] {
            let spec = FilterSpec::new(VariantKind::Expandable, q, 10);
            let cfg = ExpandableConfig::new(spec.expandable_capacity(), spec.fpr_bound);
            assert_eq!(cfg.base_bits().unwrap().0, q);
        }
    }
}
