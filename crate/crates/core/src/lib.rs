//! Quotient filters for concurrent approximate membership queries.
//!
//! The crate provides a family of quotient-filter based AMQ structures that
//! share one packed, atomically updated slot storage:
//!
//! - [`QuotientFilter`]: the sequential filter in its three-status-bit and
//!   two-status-bit layouts, with bounded growing.
//! - [`LinearProbingQf`]: no status bits, longer remainders, lock-free inserts.
//! - [`ConcurrentQf`]: the three-status-bit layout where the otherwise unused
//!   status codes `010` and `110` act as in-table read and write locks, with
//!   cooperative block-wise growing.
//! - [`ExpandableQf`]: a stack of concurrent levels with growing fingerprints
//!   that keeps the false positive rate under a user bound for any number of
//!   insertions.
//!
//! The crate is `no_std` and only needs `alloc`. Enable the `std` feature to
//! let lock waits yield to the OS scheduler.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

mod backoff;
pub mod concurrent;
mod error;
pub mod expandable;
pub mod fingerprint;
pub mod linear_probing;
mod qtable;
pub mod sequential;
pub mod status;
pub mod storage;

pub use concurrent::{ConcurrentConfig, ConcurrentQf, LockEvent, LockObserver, MIGRATION_BLOCK_SLOTS};
pub use error::{Error, Result};
pub use expandable::{ExpandableConfig, ExpandableQf, FprBound, LevelInfo, LevelStats};

pub use fingerprint::{FilterParams, Fingerprint, Key, KeyHasher, Xxh64Hasher};
pub use linear_probing::{lp_all_probes_fpr, lp_expected_fpr, LinearProbingQf};

pub use sequential::{QuotientFilter, RunLocation, Variant};
pub use storage::{slots_per_group, GroupTable, SlotLayout};
