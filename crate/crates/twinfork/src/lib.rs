//! Nested fork-join tasking with twin-replication protection against
//! silent data corruption (SDC).
//!
//! The library runs a side-effect-free fork-join program twice (an original
//! and a twin), recording each execution's task tree. If the two final
//! results disagree, a simultaneous top-down traversal of the trees marks
//! every corrupted task that could have reached the final result, and a
//! replay re-executes only the marked tasks while substituting the recorded,
//! agreed results of the rest. An analysis module reproduces the expected
//! recovery-cost model for perfect binary task trees and validates it by
//! exact summation and Monte Carlo sampling.
//!
//! Module map:
//! - [`trace`] — task identity ([`TaskPath`]) and the recorded tree ([`Trace`]).
//! - [`runtime`] — the work-stealing fork-join scheduler and replica runner.
//! - [`fault`] — deterministic bit-flip injection into task results.
//! - [`mod@detect`] — final-result comparison and corruption marking.
//! - [`mod@replay`] — spawn-suppressing re-execution with 2-of-3 resolution.
//! - [`analysis`] — recovery-cost model and its validation oracles.
//! - [`mod@bench`] — the benchmark task bodies (fib, chain, perfect tree).
//! - [`pipeline`] — end-to-end orchestration and machine-readable reports.

pub mod analysis;
pub mod bench;
pub mod detect;
pub mod fault;
pub mod pipeline;
pub mod replay;
pub mod runtime;
pub(crate) mod seeds;
pub mod trace;

pub use detect::{detect, mark_corrupted, DetectError, MarkedSet, Verdict};
pub use fault::{corrupt, ArmedFaultPlan, FaultError, FaultPlan, FaultTargets, Replica};
pub use replay::{replay, ReplayError, ReplayOutcome};
pub use runtime::{
    body_fn, run, run_replicated, ReplicatedRun, RunOutput, RunStats, RuntimeConfig,
    RuntimeError, SpawnContext, TaskBody, TaskHandle,
};
pub use seeds::derive_seed;
pub use trace::{TaskPath, TaskRecord, Trace, TraceError};
