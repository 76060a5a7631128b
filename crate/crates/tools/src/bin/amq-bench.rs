use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use qf_tools::experiments::{self, Settings};
use qf_tools::{Report, VariantKind};

/// Throughput and false positive experiments for quotient filters.
#[derive(Parser, Debug)]
#[command(name = "amq-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Insert, unsuccessful and successful query throughput per thread count.
    Scaling(Common),
    /// Throughput and false positive rate every 10% of fill.
    FillSweep(Common),
    /// Segment-wise inserts into growing and expandable filters.
    Growing(Common),
    /// Measured against analytic false positive rates.
    Fpr(Common),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct Common {
    /// log2 of the slot count (initial slot count for `growing`).
    #[arg(long)]
    slots_log2: Option<u32>,
    /// Remainder bits of the three-bit filter; comma separated for a grid.
    #[arg(long, value_delimiter = ',')]
    remainder_bits: Vec<u32>,
    /// Thread counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    threads: Vec<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Filters to measure, comma separated.
    #[arg(long, value_delimiter = ',')]
    variant: Vec<VariantKind>,
    /// Fill degrees in (0, 1), comma separated.
    #[arg(long, value_delimiter = ',')]
    fill: Vec<f64>,
    /// Successful queries per point.
    #[arg(long)]
    ops: Option<u64>,
    /// Fresh probe keys per false positive measurement.
    #[arg(long)]
    probes: Option<u64>,
    /// Number of segments for `growing`.
    #[arg(long)]
    segments: Option<usize>,
    /// Keys per segment for `growing`.
    #[arg(long)]
    segment_size: Option<u64>,
    /// False positive bound for expandable filters.
    #[arg(long)]
    fpr_bound: Option<f64>,
    /// Output file; standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

impl Common {
    fn apply(&self, mut s: Settings) -> anyhow::Result<Settings> {
        if let Some(v) = self.slots_log2 {
            s.slots_log2 = v;
        }
        if !self.remainder_bits.is_empty() {
            s.remainder_bits = self.remainder_bits.clone();
        }
        if !self.threads.is_empty() {
            s.threads = self.threads.clone();
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if !self.variant.is_empty() {
            s.variants = self.variant.clone();
        }
        if !self.fill.is_empty() {
            s.fills = self.fill.clone();
        }
        if let Some(v) = self.ops {
            s.ops = v;
        }
        if let Some(v) = self.probes {
            s.probes = v;
        }
        if let Some(v) = self.segments {
            s.segments = v;
        }
        if let Some(v) = self.segment_size {
            s.segment_size = v;
        }
        if let Some(v) = self.fpr_bound {
            s.fpr_bound = v;
        }
        anyhow::ensure!(s.threads.iter().all(|&t| t > 0), "thread counts must be positive");
        anyhow::ensure!(
            s.fills.iter().all(|&f| f > 0.0 && f < 1.0),
            "fill degrees must lie in (0, 1)"
        );
        anyhow::ensure!(s.fpr_bound > 0.0 && s.fpr_bound < 1.0, "fpr bound must lie in (0, 1)");
        Ok(s)
    }
}

fn emit(report: &Report, common: &Common) -> anyhow::Result<()> {
    let out: Box<dyn Write> = match &common.out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    match common.format {
        Format::Json => {
            let mut out = out;
            report.write_json(&mut out)?;
            writeln!(out)?;
            out.flush()?;
        }
        Format::Csv => report.write_csv(out)?,
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (common, report) = match &cli.command {
        Command::Scaling(c) => (c, experiments::scaling(&c.apply(Settings::scaling())?)?),
        Command::FillSweep(c) => (c, experiments::fill_sweep(&c.apply(Settings::fill_sweep())?)?),
        Command::Growing(c) => (c, experiments::growing(&c.apply(Settings::growing())?)?),
        Command::Fpr(c) => (c, experiments::fpr(&c.apply(Settings::fpr())?)?),
    };
    emit(&report, common)?;
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    Ok(report.is_clean())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
