//! Result records and their JSON / CSV output.

use std::io::Write;

use serde::Serialize;

/// One measurement. Fields that do not apply to an experiment stay `None`
/// and are written as `null` in JSON and as empty cells in CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Row {
    pub variant: String,
    pub phase: String,
    pub threads: Option<usize>,
    /// Target fill degree for sweeps, or the measured one after a phase.
    pub fill: Option<f64>,
    pub segment: Option<usize>,
    pub elements: Option<usize>,
    pub slots: Option<usize>,
    pub levels: Option<usize>,
    pub ops: Option<u64>,
    pub seconds: Option<f64>,
    pub mops_per_sec: Option<f64>,
    pub remainder_bits: Option<u32>,
    pub probes: Option<u64>,
    pub false_positives: Option<u64>,
    pub fpr: Option<f64>,
    pub analytic_fpr: Option<f64>,
    pub sigma: Option<f64>,
    pub z: Option<f64>,
}

impl Row {
    pub fn new(variant: &str, phase: &str) -> Self {
        Row {
            variant: variant.to_string(),
            phase: phase.to_string(),
            ..Row::default()
        }
    }

    /// Fills `ops`, `seconds` and the derived throughput.
    pub fn timed(mut self, ops: u64, seconds: f64) -> Self {
        self.ops = Some(ops);
        self.seconds = Some(seconds);
        self.mops_per_sec = Some(if seconds > 0.0 { ops as f64 / seconds / 1e6 } else { f64::INFINITY });
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub experiment: String,
    /// Echo of the settings the run used.
    pub settings: serde_json::Value,
    pub rows: Vec<Row>,
    /// Invariant violations seen during the run; a non-empty list makes the
    /// command line tool exit with an error.
    pub violations: Vec<String>,
}

impl Report {
    pub fn new(experiment: &str, settings: serde_json::Value) -> Self {
        Report {
            experiment: experiment.to_string(),
            settings,
            rows: Vec::new(),
            violations: Vec::new(),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn write_json<W: Write>(&self, out: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(out, self)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.rows.is_empty() {
            w.write_record(ROW_COLUMNS)?;
        }
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

const ROW_COLUMNS: &[&str] = &[
    "variant",
    "phase",
    "threads",
    "fill",
    "segment",
    "elements",
    "slots",
    "levels",
    "ops",
    "seconds",
    "mops_per_sec",
    "remainder_bits",
    "probes",
    "false_positives",
    "fpr",
    "analytic_fpr",
    "sigma",
    "z",
];
