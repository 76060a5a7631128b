//! The experiments behind `amq-bench`.
//!
//! Every experiment checks for false negatives on the keys it inserted and
//! runs the filter's structural self-check before reporting; anything wrong
//! ends up in [`Report::violations`].

use std::ops::Range;
use std::time::Instant;

use serde::Serialize;

use crate::report::{Report, Row};
use crate::stats::Proportion;
use crate::variants::{build_filter, Amq, FilterSpec, VariantKind};
use crate::workload::{split_range, KeyStream};

/// Knobs shared by all experiments. Each experiment has its own defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub slots_log2: u32,
    pub remainder_bits: Vec<u32>,
    pub threads: Vec<usize>,
    pub seed: u64,
    pub variants: Vec<VariantKind>,
    /// Fill degrees to insert to (scaling uses the first one).
    pub fills: Vec<f64>,
    /// Successful queries per measurement point.
    pub ops: u64,
    /// Fresh keys probed per false positive measurement.
    pub probes: u64,
    pub segments: usize,
    pub segment_size: u64,
    /// Bound handed to expandable filters.
    pub fpr_bound: f64,
}

impl Settings {
    fn base() -> Self {
        Settings {
            slots_log2: 20,
            remainder_bits: vec![10],
            threads: vec![1],
            seed: 1,
            variants: vec![VariantKind::Concurrent],
            fills: vec![0.72],
            ops: 100_000,
            probes: 100_000,
            segments: 0,
            segment_size: 0,
            fpr_bound: 1.0 / 1024.0,
        }
    }

    pub fn scaling() -> Self {
        Settings {
            threads: vec![1, 2, 4],
            variants: vec![VariantKind::Seq3, VariantKind::Lp, VariantKind::Concurrent, VariantKind::Bloom],
            ops: 0,
            probes: 0,
            ..Self::base()
        }
    }

    pub fn fill_sweep() -> Self {
        Settings {
            threads: vec![available_threads()],
            variants: vec![
                VariantKind::Seq3,
                VariantKind::Seq2,
                VariantKind::Lp,
                VariantKind::Concurrent,
                VariantKind::Bloom,
            ],
            fills: (1..=9).map(|i| i as f64 / 10.0).collect(),
            ..Self::base()
        }
    }

    pub fn growing() -> Self {
        Settings {
            slots_log2: 13,
            threads: vec![available_threads()],
            variants: vec![VariantKind::Concurrent, VariantKind::Expandable, VariantKind::ExpandableCi],
            ops: 10_000,
            segments: 50,
            segment_size: 10_000,
            ..Self::base()
        }
    }

    pub fn fpr() -> Self {
        Settings {
            slots_log2: 16,
            remainder_bits: vec![8],
            threads: vec![available_threads()],
            variants: vec![
                VariantKind::Seq3,
                VariantKind::Seq2,
                VariantKind::Lp,
                VariantKind::Concurrent,
                VariantKind::Bloom,
            ],
            fills: vec![0.3, 0.5, 0.7, 0.9],
            probes: 1_000_000,
            ..Self::base()
        }
    }

    fn spec(&self, kind: VariantKind, remainder_bits: u32) -> FilterSpec {
        FilterSpec::new(kind, self.slots_log2, remainder_bits)
            .with_seed(self.seed)
            .with_fpr_bound(self.fpr_bound)
    }

    fn settings_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("settings serialize")
    }
}

pub fn available_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn effective_threads(kind: VariantKind, threads: usize) -> usize {
    if kind.thread_safe() {
        threads.max(1)
    } else {
        1
    }
}

/// Inserts keys `range` from `threads` workers. Returns the elapsed seconds
/// and the first error each worker hit.
pub fn insert_keys(f: &dyn Amq, keys: &KeyStream, range: Range<u64>, threads: usize) -> (f64, Vec<String>) {
    let parts = split_range(range.end - range.start, threads);
    let start = Instant::now();
    let errors: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = parts
            .into_iter()
            .map(|p| {
                let r = (range.start + p.start)..(range.start + p.end);
                s.spawn(move || {
                    for i in r {
                        if let Err(e) = f.insert(keys.key(i)) {
                            return Some(format!("{}: insert of key #{i} failed: {e}", f.kind().name()));
                        }
                    }
                    None
                })
            })
            .collect();
        handles.into_iter().filter_map(|h| h.join().expect("worker panicked")).collect()
    });
    (start.elapsed().as_secs_f64(), errors)
}

/// Counts how many of `count` keys produced by `key_of` the filter reports.
pub fn count_hits<F>(f: &dyn Amq, count: u64, threads: usize, key_of: F) -> (f64, u64)
where
    F: Fn(u64) -> u64 + Sync,
{
    let parts = split_range(count, threads);
    let key_of = &key_of;
    let start = Instant::now();
    let hits = std::thread::scope(|s| {
        let handles: Vec<_> = parts
            .into_iter()
            .map(|r| s.spawn(move || r.filter(|&j| f.contains(key_of(j))).count() as u64))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).sum()
    });
    (start.elapsed().as_secs_f64(), hits)
}

/// Index of the `j`-th of `ops` evenly spaced samples out of `n` keys.
fn sample(j: u64, ops: u64, n: u64) -> u64 {
    ((j as u128 * n as u128) / ops as u128) as u64
}

fn elements_for(fill: f64, slots: usize) -> u64 {
    (fill * slots as f64) as u64
}

fn successful_queries(
    f: &dyn Amq,
    keys: &KeyStream,
    inserted: u64,
    ops: u64,
    threads: usize,
    report: &mut Report,
) -> Row {
    let (secs, hits) = count_hits(f, ops, threads, |j| keys.key(sample(j, ops, inserted)));
    if hits != ops {
        report
            .violations
            .push(format!("{}: {} false negatives", f.kind().name(), ops - hits));
    }
    Row::new(f.kind().name(), "query-hit").timed(ops, secs)
}

fn negative_queries(f: &dyn Amq, keys: &KeyStream, first: u64, probes: u64, threads: usize) -> Row {
    let (secs, hits) = count_hits(f, probes, threads, |j| keys.probe(first + j));
    let fp = Proportion::new(hits, probes);
    let analytic = f.analytic_fpr();
    let mut row = Row::new(f.kind().name(), "query-miss").timed(probes, secs);
    row.probes = Some(probes);
    row.false_positives = Some(hits);
    row.fpr = Some(fp.rate());
    row.analytic_fpr = Some(analytic);
    row.sigma = Some(fp.sigma_at(analytic));
    row.z = Some(fp.z_score(analytic));
    row
}

fn self_check(f: &dyn Amq, report: &mut Report) {
    if let Err(e) = f.check() {
        report.violations.push(format!("{}: {e}", f.kind().name()));
    }
}

fn describe(mut row: Row, f: &dyn Amq, threads: usize) -> Row {
    row.threads = Some(threads);
    row.elements = Some(f.len());
    row.slots = Some(f.slots());
    row.levels = f.levels();
    row
}

/// Throughput over thread counts: insert to the fill degree, then probe
/// with never-inserted keys, then query inserted keys.
pub fn scaling(s: &Settings) -> Result<Report, qf_core::Error> {
    let mut report = Report::new("scaling", s.settings_json());
    let keys = KeyStream::new(s.seed);
    let fill = s.fills.first().copied().unwrap_or(0.72);
    let r = s.remainder_bits.first().copied().unwrap_or(10);
    for &kind in &s.variants {
        for &p in &s.threads {
            if !kind.thread_safe() && p > 1 {
                continue;
            }
            let f = build_filter(&s.spec(kind, r))?;
            let n = elements_for(fill, f.slots());
            let ops = if s.ops == 0 { n } else { s.ops };
            let probes = if s.probes == 0 { n } else { s.probes };

            let (secs, errors) = insert_keys(&*f, &keys, 0..n, p);
            report.violations.extend(errors);
            let mut row = Row::new(kind.name(), "insert").timed(n, secs);
            row.fill = Some(fill);
            row.remainder_bits = Some(r);
            report.rows.push(describe(row, &*f, p));

            let mut row = negative_queries(&*f, &keys, 0, probes, p);
            row.fill = Some(fill);
            report.rows.push(describe(row, &*f, p));

            let mut row = successful_queries(&*f, &keys, n, ops.min(n), p, &mut report);
            row.fill = Some(fill);
            report.rows.push(describe(row, &*f, p));
            self_check(&*f, &mut report);
        }
    }
    Ok(report)
}

/// Throughput and false positive rate at increasing fill degrees. Each
/// point times the inserts since the previous point plus `ops` successful
/// and `probes` unsuccessful queries.
pub fn fill_sweep(s: &Settings) -> Result<Report, qf_core::Error> {
    let mut report = Report::new("fill-sweep", s.settings_json());
    let keys = KeyStream::new(s.seed);
    let p_req = s.threads.first().copied().unwrap_or(1);
    for &r in &s.remainder_bits {
        for &kind in &s.variants {
            let p = effective_threads(kind, p_req);
            let f = build_filter(&s.spec(kind, r))?;
            let mut inserted = 0;
            for (step, &fill) in s.fills.iter().enumerate() {
                let n = elements_for(fill, f.slots());
                if n < inserted {
                    continue;
                }
                let (secs, errors) = insert_keys(&*f, &keys, inserted..n, p);
                let failed = !errors.is_empty();
                report.violations.extend(errors);
                let mut row = Row::new(kind.name(), "insert").timed(n - inserted, secs);
                inserted = n;
                row.fill = Some(fill);
                row.remainder_bits = Some(r);
                report.rows.push(describe(row, &*f, p));
                if failed {
                    break;
                }

                let mut row = successful_queries(&*f, &keys, n, s.ops.min(n.max(1)), p, &mut report);
                row.fill = Some(fill);
                row.remainder_bits = Some(r);
                report.rows.push(describe(row, &*f, p));

                let mut row = negative_queries(&*f, &keys, step as u64 * s.probes, s.probes, p);
                row.fill = Some(fill);
                row.remainder_bits = Some(r);
                report.rows.push(describe(row, &*f, p));
            }
            self_check(&*f, &mut report);
        }
    }
    Ok(report)
}

/// Inserts `segments` batches of `segment_size` keys into filters that
/// must grow, measuring throughput and false positive rate per segment.
/// For expandable filters a measured rate above the bound plus three
/// standard deviations counts as a violation.
pub fn growing(s: &Settings) -> Result<Report, qf_core::Error> {
    let mut report = Report::new("growing", s.settings_json());
    let keys = KeyStream::new(s.seed);
    let p_req = s.threads.first().copied().unwrap_or(1);
    let r = s.remainder_bits.first().copied().unwrap_or(10);
    for &kind in &s.variants {
        let p = effective_threads(kind, p_req);
        let f = build_filter(&s.spec(kind, r).with_growing(true))?;
        let expandable = matches!(kind, VariantKind::Expandable | VariantKind::ExpandableCi);
        for seg in 0..s.segments {
            let lo = seg as u64 * s.segment_size;
            let hi = lo + s.segment_size;
            let (secs, errors) = insert_keys(&*f, &keys, lo..hi, p);
            let failed = !errors.is_empty();
            report.violations.extend(errors);
            let mut row = Row::new(kind.name(), "insert").timed(s.segment_size, secs);
            row.segment = Some(seg);
            report.rows.push(describe(row, &*f, p));
            if failed {
                break;
            }

            let mut row = successful_queries(&*f, &keys, hi, s.ops.min(hi), p, &mut report);
            row.segment = Some(seg);
            report.rows.push(describe(row, &*f, p));

            let mut row = negative_queries(&*f, &keys, seg as u64 * s.probes, s.probes, p);
            row.segment = Some(seg);
            if expandable {
                let fp = Proportion::new(row.false_positives.unwrap_or(0), s.probes);
                if fp.rate() > s.fpr_bound + 3.0 * fp.sigma_at(s.fpr_bound) {
                    report.violations.push(format!(
                        "{}: segment {seg} measured fpr {:.3e} above bound {:.3e}",
                        kind.name(),
                        fp.rate(),
                        s.fpr_bound
                    ));
                }
            }
            report.rows.push(describe(row, &*f, p));
            self_check(&*f, &mut report);
        }
    }
    Ok(report)
}

/// Measured against analytic false positive rate over a grid of remainder
/// widths and fill degrees.
pub fn fpr(s: &Settings) -> Result<Report, qf_core::Error> {
    let mut report = Report::new("fpr", s.settings_json());
    let keys = KeyStream::new(s.seed);
    let p_req = s.threads.first().copied().unwrap_or(1);
    for &r in &s.remainder_bits {
        for &kind in &s.variants {
            let p = effective_threads(kind, p_req);
            for &fill in &s.fills {
                let f = build_filter(&s.spec(kind, r))?;
                let n = elements_for(fill, f.slots());
                let (_, errors) = insert_keys(&*f, &keys, 0..n, p);
                if !errors.is_empty() {
                    report.violations.extend(errors);
                    continue;
                }
                let (_, hits) = count_hits(&*f, n, p, |i| keys.key(i));
                if hits != n {
                    report
                        .violations
                        .push(format!("{}: {} false negatives", kind.name(), n - hits));
                }
                let mut row = negative_queries(&*f, &keys, 0, s.probes, p);
                row.phase = "fpr".into();
                row.fill = Some(fill);
                row.remainder_bits = Some(r);
                report.rows.push(describe(row, &*f, p));
                self_check(&*f, &mut report);
            }
        }
    }
    Ok(report)
}
