//! Command-line harness for the twinfork pipeline: run a benchmark with
//! optional fault injection, report per-repetition recovery records, or
//! emit the recovery-cost analysis table.

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use twinfork::analysis;
use twinfork::bench::BenchSpec;
use twinfork::derive_seed;
use twinfork::fault::{FaultPlan, FaultTargets, Replica};
use twinfork::pipeline::{
    aggregate, csv_row, rep_request, run_pipeline, PipelineError, PipelineRequest,
    RecoveryReport, CSV_HEADER,
};
use twinfork::trace::TaskPath;

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BenchName {
    Fib,
    Chain,
    Tree,
    /// Deliberately nondeterministic body; demonstrates the abort semantics.
    Nondet,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SdcReplica {
    Original,
    Twin,
    /// Corrupt the chosen targets in the original computation and corrupt
    /// them again when they are first reprocessed, exercising the repeat
    /// rule.
    Reprocess,
}

/// Fork-join benchmarks with twin-replication SDC detection and recovery.
#[derive(Parser, Debug)]
#[command(name = "twinfork-bench", version)]
struct Cli {
    /// Benchmark to run
    #[arg(long, value_enum, default_value_t = BenchName::Fib)]
    bench: BenchName,

    /// Fibonacci argument
    #[arg(long, default_value_t = 30)]
    n: u64,

    /// Sequential cutoff: fib arguments at or below it run without spawning
    #[arg(long, default_value_t = 15)]
    cutoff: u64,

    /// Tree height; also the chain benchmark's depth
    #[arg(long, default_value_t = 10)]
    height: u64,

    /// Children per task in the chain benchmark
    #[arg(long, default_value_t = 2)]
    width: u64,

    /// Busy-work units per task in the tree benchmark
    #[arg(long, default_value_t = 0)]
    work_units: u64,

    /// Worker contexts in the pool
    #[arg(long, default_value_t = 4)]
    workers: usize,

    /// Master seed for work-stealing victim selection
    #[arg(long, default_value_t = 42)]
    steal_seed: u64,

    /// SDCs to inject per repetition, uniformly selected (0 = none)
    #[arg(long, default_value_t = 0)]
    sdc_count: usize,

    /// Master seed for target selection and bit positions
    #[arg(long, default_value_t = 7)]
    sdc_seed: u64,

    /// Bits flipped per injected fault
    #[arg(long, default_value_t = 1)]
    sdc_bits: u32,

    /// Replica to corrupt
    #[arg(long, value_enum, default_value_t = SdcReplica::Original)]
    sdc_replica: SdcReplica,

    /// Explicit dotted target path (repeatable); overrides --sdc-count
    #[arg(long)]
    sdc_path: Vec<String>,

    /// Replay round budget
    #[arg(long, default_value_t = 3)]
    max_rounds: u32,

    /// Repetitions; per-repetition seeds derive from the master seeds
    #[arg(long, default_value_t = 1)]
    reps: u32,

    /// Report format
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    report: ReportFormat,

    /// Write the first repetition's original-replica trace dump here
    #[arg(long)]
    dump_trace: Option<PathBuf>,

    /// Emit the analysis table for heights 1..=H instead of benchmarking
    #[arg(long, value_name = "H")]
    analyze: Option<u32>,
}

enum CliError {
    Pipeline(PipelineError),
    Analysis(analysis::AnalysisError),
    BadPath(String),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Pipeline(e) => write!(f, "{e}"),
            CliError::Analysis(e) => write!(f, "{e}"),
            CliError::BadPath(p) => write!(f, "malformed --sdc-path `{p}`"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Pipeline(e)
    }
}

impl From<analysis::AnalysisError> for CliError {
    fn from(e: analysis::AnalysisError) -> Self {
        CliError::Analysis(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("twinfork-bench: error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(max_height) = cli.analyze {
        return analyze_table(max_height, cli.sdc_seed);
    }
    let base = build_request(&cli)?;

    let mut reports: Vec<RecoveryReport> = Vec::with_capacity(cli.reps as usize);
    for rep in 0..cli.reps {
        let request = rep_request(&base, rep);
        let output = run_pipeline(&request)?;
        if rep == 0 {
            if let Some(path) = &cli.dump_trace {
                let dump = output
                    .original
                    .dump()
                    .map_err(twinfork::runtime::RuntimeError::Trace)
                    .map_err(PipelineError::Runtime)?;
                fs::write(path, dump)?;
            }
        }
        reports.push(output.report);
    }

    match cli.report {
        ReportFormat::Json => {
            let document = serde_json::json!({
                "repetitions": reports,
                "aggregate": aggregate(&reports),
            });
            println!("{}", serde_json::to_string_pretty(&document).expect("report json"));
        }
        ReportFormat::Csv => {
            println!("{CSV_HEADER}");
            for report in &reports {
                println!("{}", csv_row(report));
            }
        }
    }
    Ok(())
}

fn build_request(cli: &Cli) -> Result<PipelineRequest, CliError> {
    let bench = match cli.bench {
        BenchName::Fib => BenchSpec::Fib {
            n: cli.n,
            cutoff: cli.cutoff,
        },
        BenchName::Chain => BenchSpec::Chain {
            depth: cli.height,
            width: cli.width,
        },
        BenchName::Tree => BenchSpec::Tree {
            height: cli.height,
            work_units: cli.work_units,
        },
        BenchName::Nondet => BenchSpec::Nondet,
    };

    let targets = if cli.sdc_path.is_empty() {
        if cli.sdc_count == 0 {
            None
        } else {
            Some(FaultTargets::Sampled {
                count: cli.sdc_count,
                selection_seed: cli.sdc_seed,
            })
        }
    } else {
        let paths = cli
            .sdc_path
            .iter()
            .map(|raw| {
                raw.parse::<TaskPath>()
                    .map_err(|_| CliError::BadPath(raw.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Some(FaultTargets::Explicit(paths))
    };

    let mut request = PipelineRequest::new(bench);
    request.workers = cli.workers;
    request.steal_seed = cli.steal_seed;
    request.max_rounds = cli.max_rounds;

    if let Some(targets) = targets {
        let primary_replica = match cli.sdc_replica {
            SdcReplica::Twin => Replica::Twin,
            _ => Replica::Original,
        };
        request.faults.push(FaultPlan {
            replica: primary_replica,
            targets: targets.clone(),
            bits_per_fault: cli.sdc_bits,
            bit_seed: derive_seed(cli.sdc_seed, 1),
        });
        if cli.sdc_replica == SdcReplica::Reprocess {
            // same targets, independent bit positions, fired during replay
            request.faults.push(FaultPlan {
                replica: Replica::Reprocessing,
                targets,
                bits_per_fault: cli.sdc_bits,
                bit_seed: derive_seed(cli.sdc_seed, 2),
            });
        }
    }
    Ok(request)
}

fn analyze_table(max_height: u32, seed: u64) -> Result<(), CliError> {
    const TRIALS: u64 = 100_000;
    println!("h,closed,exact,mc_mean,mc_stderr");
    for h in 1..=max_height {
        let closed = analysis::expected_reprocessed_closed(h)?;
        let exact = analysis::expected_reprocessed_exact(h)?;
        let (mean, std_error) = analysis::monte_carlo_reprocessed(h, TRIALS, derive_seed(seed, u64::from(h)))?;
        println!("{h},{closed:.9},{exact:.9},{mean:.9},{std_error:.9}");
    }
    Ok(())
}
