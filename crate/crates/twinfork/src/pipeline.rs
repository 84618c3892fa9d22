//! End-to-end orchestration: track both replicas, detect, traverse, replay,
//! and report.
//!
//! [`run_pipeline`] first performs a single clean sequential run — the
//! fault-free oracle. Its final result grades recovery (`correct`), and its
//! trace is the reference shape against which fault plans resolve their
//! targets; it is excluded from the reported phase durations. The replica
//! pair then runs on the configured worker pool, and on a verdict of
//! disagree the traversal and replay phases complete the recovery.
//!
//! Reports are machine readable: JSON (one object per repetition plus an
//! aggregate) or CSV (one row per repetition under a fixed header). Count
//! fields are exactly reproducible from the seeds; durations are wall-clock
//! and vary.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::bench::BenchSpec;
use crate::detect::{detect, mark_corrupted, DetectError, Verdict};
use crate::fault::{FaultError, FaultPlan, FaultTargets};
use crate::replay::{replay, ReplayError};
use crate::runtime::{run, run_replicated, RunOutput, RuntimeConfig, RuntimeError};
use crate::seeds::derive_seed;
use crate::trace::Trace;

/// One pipeline invocation: a benchmark, a scheduler setup, and fault plans.
#[derive(Clone, Debug)]
pub struct PipelineRequest {
    pub bench: BenchSpec,
    pub workers: usize,
    pub steal_seed: u64,
    pub faults: Vec<FaultPlan>,
    pub max_rounds: u32,
    /// Repetition index stamped into the report.
    pub rep: u32,
}

impl PipelineRequest {
    pub fn new(bench: BenchSpec) -> Self {
        PipelineRequest {
            bench,
            workers: 1,
            steal_seed: 0,
            faults: Vec::new(),
            max_rounds: 3,
            rep: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

/// Wall-clock seconds per phase. Traversal includes the final-result
/// comparison when the verdict is disagree; traversal and reprocessing are
/// zero on agree.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PhaseDurations {
    pub original_s: f64,
    pub twin_s: f64,
    pub traversal_s: f64,
    pub reprocessing_s: f64,
}

/// A fault plan as resolved for one run.
#[derive(Debug, Clone, Serialize)]
pub struct FaultSummary {
    pub replica: String,
    pub mode: String,
    pub count: usize,
    pub selection_seed: Option<u64>,
    pub bits_per_fault: u32,
    pub bit_seed: u64,
    pub targets: Vec<String>,
}

/// Machine-readable record of one pipeline repetition.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub bench: String,
    pub params: BTreeMap<String, u64>,
    pub workers: usize,
    pub steal_seed: u64,
    pub rep: u32,
    pub faults: Vec<FaultSummary>,
    pub durations_s: PhaseDurations,
    pub verdict: String,
    pub marked: u64,
    pub visited_comparisons: u64,
    pub rounds: u32,
    pub recomputed: u64,
    pub reused: u64,
    /// Final result equals the fault-free oracle's.
    pub correct: bool,
}

/// Report plus the recorded replica traces, for dumping and inspection.
#[derive(Debug)]
pub struct PipelineOutput {
    pub report: RecoveryReport,
    pub original: Trace,
    pub twin: Trace,
}

/// Execute track -> detect -> traverse -> reprocess for one request.
pub fn run_pipeline(request: &PipelineRequest) -> Result<PipelineOutput, PipelineError> {
    let body = request.bench.body();
    let input = request.bench.input();

    // fault-free oracle: clean sequential run, outside the phase clocks
    let oracle_config = RuntimeConfig::new(1).with_steal_seed(request.steal_seed);
    let oracle: RunOutput = run(&body, &input, &oracle_config)?;
    let reference = oracle.trace.as_ref().expect("oracle tracking on");

    let mut config = RuntimeConfig::new(request.workers).with_steal_seed(request.steal_seed);
    let mut fault_summaries = Vec::new();
    for plan in &request.faults {
        let armed = Arc::new(plan.arm(reference)?);
        fault_summaries.push(summarize(plan, armed.targets()));
        config.faults.push(armed);
    }

    let pair = run_replicated(&body, &input, &config)?;
    let mut durations = PhaseDurations {
        original_s: pair.original_duration.as_secs_f64(),
        twin_s: pair.twin_duration.as_secs_f64(),
        traversal_s: 0.0,
        reprocessing_s: 0.0,
    };

    let comparison_started = Instant::now();
    let verdict = detect(&pair.original, &pair.twin)?;
    let report = match verdict {
        Verdict::Agree => RecoveryReport {
            bench: request.bench.label().to_string(),
            params: request.bench.params(),
            workers: request.workers,
            steal_seed: request.steal_seed,
            rep: request.rep,
            faults: fault_summaries,
            durations_s: durations,
            verdict: "agree".to_string(),
            marked: 0,
            visited_comparisons: 0,
            rounds: 0,
            recomputed: 0,
            reused: 0,
            correct: pair.original.final_result() == Some(oracle.final_result.as_slice()),
        },
        Verdict::Disagree => {
            let marked = mark_corrupted(&pair.original, &pair.twin)?;
            durations.traversal_s = comparison_started.elapsed().as_secs_f64();

            let replay_started = Instant::now();
            let outcome = replay(
                &body,
                &input,
                &pair.original,
                &pair.twin,
                &marked,
                &config,
                request.max_rounds,
            )?;
            durations.reprocessing_s = replay_started.elapsed().as_secs_f64();

            RecoveryReport {
                bench: request.bench.label().to_string(),
                params: request.bench.params(),
                workers: request.workers,
                steal_seed: request.steal_seed,
                rep: request.rep,
                faults: fault_summaries,
                durations_s: durations,
                verdict: "disagree".to_string(),
                marked: marked.len() as u64,
                visited_comparisons: marked.visited_comparisons(),
                rounds: outcome.rounds,
                recomputed: outcome.recomputed,
                reused: outcome.reused,
                correct: outcome.final_result == oracle.final_result,
            }
        }
    };
    Ok(PipelineOutput {
        report,
        original: pair.original,
        twin: pair.twin,
    })
}

fn summarize(
    plan: &FaultPlan,
    resolved: &std::collections::BTreeSet<crate::trace::TaskPath>,
) -> FaultSummary {
    let (mode, selection_seed) = match &plan.targets {
        FaultTargets::Explicit(_) => ("explicit".to_string(), None),
        FaultTargets::Sampled { selection_seed, .. } => {
            ("sampled".to_string(), Some(*selection_seed))
        }
    };
    FaultSummary {
        replica: plan.replica.to_string(),
        mode,
        count: resolved.len(),
        selection_seed,
        bits_per_fault: plan.bits_per_fault,
        bit_seed: plan.bit_seed,
        targets: resolved.iter().map(|p| p.to_string()).collect(),
    }
}

/// Aggregate over the repetitions of one configuration. Count means are
/// exactly reproducible from the seeds; duration means are not.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub reps: u32,
    pub agree: u32,
    pub disagree: u32,
    pub all_correct: bool,
    pub mean_durations_s: PhaseDurations,
    pub mean_marked: f64,
    pub mean_visited_comparisons: f64,
    pub mean_rounds: f64,
    pub mean_recomputed: f64,
    pub mean_reused: f64,
}

pub fn aggregate(reports: &[RecoveryReport]) -> AggregateReport {
    let n = reports.len().max(1) as f64;
    let mean = |f: &dyn Fn(&RecoveryReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    AggregateReport {
        reps: reports.len() as u32,
        agree: reports.iter().filter(|r| r.verdict == "agree").count() as u32,
        disagree: reports.iter().filter(|r| r.verdict == "disagree").count() as u32,
        all_correct: reports.iter().all(|r| r.correct),
        mean_durations_s: PhaseDurations {
            original_s: mean(&|r| r.durations_s.original_s),
            twin_s: mean(&|r| r.durations_s.twin_s),
            traversal_s: mean(&|r| r.durations_s.traversal_s),
            reprocessing_s: mean(&|r| r.durations_s.reprocessing_s),
        },
        mean_marked: mean(&|r| r.marked as f64),
        mean_visited_comparisons: mean(&|r| r.visited_comparisons as f64),
        mean_rounds: mean(&|r| f64::from(r.rounds)),
        mean_recomputed: mean(&|r| r.recomputed as f64),
        mean_reused: mean(&|r| r.reused as f64),
    }
}

/// The request for repetition `rep`: steal and fault seeds fan out from the
/// base seeds through fixed integer mixing, so a master seed reproduces the
/// same repetition seeds on any machine.
pub fn rep_request(base: &PipelineRequest, rep: u32) -> PipelineRequest {
    let mut request = base.clone();
    request.rep = rep;
    request.steal_seed = derive_seed(base.steal_seed, u64::from(rep));
    for plan in &mut request.faults {
        plan.bit_seed = derive_seed(plan.bit_seed, u64::from(rep));
        if let FaultTargets::Sampled { selection_seed, .. } = &mut plan.targets {
            *selection_seed = derive_seed(*selection_seed, u64::from(rep));
        }
    }
    request
}

/// Run `reps` derived repetitions sequentially (clean duration measurement)
/// and aggregate them.
pub fn run_repetitions(
    base: &PipelineRequest,
    reps: u32,
) -> Result<(Vec<RecoveryReport>, AggregateReport), PipelineError> {
    let mut reports = Vec::with_capacity(reps as usize);
    for rep in 0..reps {
        let request = rep_request(base, rep);
        reports.push(run_pipeline(&request)?.report);
    }
    let summary = aggregate(&reports);
    Ok((reports, summary))
}

/// Fixed CSV header; one [`csv_row`] per repetition matches it column for
/// column.
pub const CSV_HEADER: &str = "bench,params,workers,steal_seed,rep,sdc_replicas,sdc_targets,\
sdc_bits,selection_seed,bit_seed,original_s,twin_s,traversal_s,reprocessing_s,verdict,marked,\
visited_comparisons,rounds,recomputed,reused,correct";

pub fn csv_row(report: &RecoveryReport) -> String {
    let params = report
        .params
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";");
    let replicas = report
        .faults
        .iter()
        .map(|f| f.replica.clone())
        .collect::<Vec<_>>()
        .join("+");
    // CSV summarizes the first plan; the JSON report carries all of them
    let (targets, bits, selection_seed, bit_seed) = match report.faults.first() {
        Some(first) => (
            match first.mode.as_str() {
                "sampled" => format!("sampled:{}", first.count),
                _ => format!("paths:{}", first.targets.join("|")),
            },
            first.bits_per_fault.to_string(),
            first
                .selection_seed
                .map(|s| s.to_string())
                .unwrap_or_default(),
            first.bit_seed.to_string(),
        ),
        None => (String::new(), String::new(), String::new(), String::new()),
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{},{}",
        report.bench,
        params,
        report.workers,
        report.steal_seed,
        report.rep,
        replicas,
        targets,
        bits,
        selection_seed,
        bit_seed,
        report.durations_s.original_s,
        report.durations_s.twin_s,
        report.durations_s.traversal_s,
        report.durations_s.reprocessing_s,
        report.verdict,
        report.marked,
        report.visited_comparisons,
        report.rounds,
        report.recomputed,
        report.reused,
        report.correct,
    )
}
