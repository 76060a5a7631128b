//! Tooling around `qf-core`: a binary dump format for every filter type, a
//! Bloom filter baseline of matching size, key streams, and the experiments
//! behind the `amq-bench` command line tool.

pub mod bloom;
pub mod dump;
pub mod experiments;
pub mod report;
pub mod stats;
pub mod variants;
pub mod workload;

pub use bloom::BloomFilter;
pub use report::{Report, Row};
pub use variants::{build_filter, Amq, FilterSpec, VariantKind};
pub use workload::KeyStream;
