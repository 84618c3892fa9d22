//! Work-stealing execution of side-effect-free nested fork-join programs.
//!
//! A task body is a deterministic function from input bytes to result bytes
//! that may spawn children through its [`SpawnContext`] and must retrieve
//! every spawned handle before returning. Each worker owns a double-ended
//! queue: spawns push the child onto the owner's end, idle workers steal
//! from the opposite end of a victim chosen by a seeded per-worker
//! generator. A worker that waits on an unfinished child first tries to
//! claim and run the child itself, then helps with other pending work
//! rather than blocking idly; with one worker this degenerates to plain
//! depth-first recursion, the reference schedule.
//!
//! Child indices follow program spawn order within each parent, so a
//! deterministic body yields the same [`TaskPath`] numbering in every run
//! regardless of worker count or steal order. With tracking enabled the
//! runtime performs exactly one spawn record per spawn and one result
//! record per task.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use crossbeam::deque::{Steal, Stealer, Worker};
use dashmap::DashMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fault::{ArmedFaultPlan, Replica};
use crate::seeds::derive_seed;
use crate::trace::{TaskPath, Trace, TraceError};

const WORKER_STACK_BYTES: usize = 32 * 1024 * 1024;

/// A user computation: deterministic, side-effect free, and fully synced
/// (every spawned handle retrieved via [`SpawnContext::get`] before
/// returning). Identical inputs and identical child results must yield an
/// identical result and an identical spawn sequence.
pub trait TaskBody: Send + Sync + 'static {
    fn run(&self, input: &[u8], ctx: &mut SpawnContext<'_>) -> Vec<u8>;
}

impl<F> TaskBody for F
where
    F: Fn(&[u8], &mut SpawnContext<'_>) -> Vec<u8> + Send + Sync + 'static,
{
    fn run(&self, input: &[u8], ctx: &mut SpawnContext<'_>) -> Vec<u8> {
        self(input, ctx)
    }
}

/// Wrap a closure as a shareable task body.
pub fn body_fn<F>(f: F) -> Arc<dyn TaskBody>
where
    F: Fn(&[u8], &mut SpawnContext<'_>) -> Vec<u8> + Send + Sync + 'static,
{
    Arc::new(f)
}

/// Scheduler configuration for one execution.
#[derive(Clone)]
pub struct RuntimeConfig {
    /// Worker contexts; 1 executes sequentially depth-first on the caller.
    pub workers: usize,
    /// Seed for victim selection; per-worker generators derive from it.
    pub steal_seed: u64,
    /// Record the task tree while executing.
    pub tracking: bool,
    /// Armed fault plans; each fires only in the replica it names.
    pub faults: Vec<Arc<ArmedFaultPlan>>,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            workers: 1,
            steal_seed: 0,
            tracking: true,
            faults: Vec::new(),
        }
    }
}

impl RuntimeConfig {
    pub fn new(workers: usize) -> Self {
        RuntimeConfig {
            workers,
            ..Self::default()
        }
    }

    pub fn with_steal_seed(mut self, seed: u64) -> Self {
        self.steal_seed = seed;
        self
    }

    pub fn with_tracking(mut self, tracking: bool) -> Self {
        self.tracking = tracking;
        self
    }

    pub fn with_fault(mut self, plan: Arc<ArmedFaultPlan>) -> Self {
        self.faults.push(plan);
        self
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("task {path} panicked: {message}")]
    TaskPanicked { path: TaskPath, message: String },
    #[error("trace recording failed: {0}")]
    Trace(#[from] TraceError),
    #[error("task {path} spawned a different child count than its recorded shape")]
    ShapeDiverged { path: TaskPath },
    #[error("recorded replica results disagree at reused task {path}")]
    ReuseInconsistent { path: TaskPath },
    #[error("invalid runtime configuration: {0}")]
    Config(String),
}

/// Counters from one execution.
#[derive(Debug, Clone, Default)]
pub struct RunStats {
    /// Spawn events performed (suppressed spawns excluded; root excluded).
    pub spawns: u64,
    /// Task bodies run to completion, root included.
    pub tasks_executed: u64,
    /// Tasks claimed from another worker's queue.
    pub steals: u64,
    /// Tasks completed per worker index.
    pub per_worker_executed: Vec<u64>,
}

/// Result of [`run`].
#[derive(Debug)]
pub struct RunOutput {
    pub final_result: Vec<u8>,
    pub trace: Option<Trace>,
    pub stats: RunStats,
    pub duration: Duration,
}

/// Result of [`run_replicated`]: both complete traces and their phase
/// durations.
#[derive(Debug)]
pub struct ReplicatedRun {
    pub original: Trace,
    pub twin: Trace,
    pub original_duration: Duration,
    pub twin_duration: Duration,
    pub original_stats: RunStats,
    pub twin_stats: RunStats,
}

// ---------------------------------------------------------------------------
// Internal scheduler state
// ---------------------------------------------------------------------------

/// Sentinel panic payload used to unwind worker stacks after a failure.
struct Abort;

struct TaskState {
    path: TaskPath,
    body: Arc<dyn TaskBody>,
    input: Vec<u8>,
    claimed: AtomicBool,
    result: OnceLock<Vec<u8>>,
}

impl TaskState {
    fn new(path: TaskPath, body: Arc<dyn TaskBody>, input: Vec<u8>) -> Self {
        TaskState {
            path,
            body,
            input,
            claimed: AtomicBool::new(false),
            result: OnceLock::new(),
        }
    }

    fn try_claim(&self) -> bool {
        !self.claimed.swap(true, Ordering::AcqRel)
    }
}

/// Per-round replay context: which tasks to re-execute, where agreed
/// results come from, and what this round produced.
pub(crate) struct ReplayRound<'a> {
    pub(crate) marked: &'a BTreeSet<TaskPath>,
    pub(crate) original: &'a Trace,
    pub(crate) twin: &'a Trace,
    /// Values accepted in earlier rounds, reused ahead of the traces.
    pub(crate) resolved: &'a DashMap<TaskPath, Vec<u8>>,
    /// Recomputed results of this round.
    pub(crate) results: DashMap<TaskPath, Vec<u8>>,
    /// Tasks whose recomputed result matched neither prior replica value.
    pub(crate) unresolved: Mutex<BTreeSet<TaskPath>>,
    /// Spawns suppressed this round.
    pub(crate) reused: AtomicU64,
}

impl<'a> ReplayRound<'a> {
    pub(crate) fn new(
        marked: &'a BTreeSet<TaskPath>,
        original: &'a Trace,
        twin: &'a Trace,
        resolved: &'a DashMap<TaskPath, Vec<u8>>,
    ) -> Self {
        ReplayRound {
            marked,
            original,
            twin,
            resolved,
            results: DashMap::new(),
            unresolved: Mutex::new(BTreeSet::new()),
            reused: AtomicU64::new(0),
        }
    }

    /// The value substituted for a suppressed spawn. Agreed frontier values
    /// are byte-identical in both traces by construction; a disagreement
    /// here is an internal consistency failure and aborts the round.
    fn reuse_value(&self, parent: &TaskPath, child: &TaskPath) -> Result<Vec<u8>, RuntimeError> {
        if let Some(accepted) = self.resolved.get(child) {
            return Ok(accepted.clone());
        }
        match (self.original.result_of(child), self.twin.result_of(child)) {
            (Some(a), Some(b)) if a == b => Ok(a),
            (Some(_), Some(_)) => Err(RuntimeError::ReuseInconsistent {
                path: child.clone(),
            }),
            // the child was never recorded: the parent spawned beyond its shape
            _ => Err(RuntimeError::ShapeDiverged {
                path: parent.clone(),
            }),
        }
    }
}

enum Mode<'a> {
    Plain,
    Tracked(&'a Trace),
    Replay(&'a ReplayRound<'a>),
}

struct Shared<'a> {
    stealers: Vec<Stealer<Arc<TaskState>>>,
    done: AtomicBool,
    aborted: AtomicBool,
    failure: Mutex<Option<RuntimeError>>,
    mode: Mode<'a>,
    replica: Replica,
    faults: Vec<Arc<ArmedFaultPlan>>,
    spawns: AtomicU64,
    tasks: AtomicU64,
    steals: AtomicU64,
    per_worker: Vec<AtomicU64>,
}

impl Shared<'_> {
    fn fail(&self, err: RuntimeError) {
        {
            let mut slot = self.failure.lock().expect("failure slot");
            if slot.is_none() {
                *slot = Some(err);
            }
        }
        self.aborted.store(true, Ordering::SeqCst);
        self.done.store(true, Ordering::SeqCst);
    }

    fn abort(&self, err: RuntimeError) -> ! {
        self.fail(err);
        panic::panic_any(Abort);
    }
}

struct WorkerCtx<'a> {
    index: usize,
    deque: Worker<Arc<TaskState>>,
    rng: RefCell<ChaCha8Rng>,
    shared: &'a Shared<'a>,
}

impl<'a> WorkerCtx<'a> {
    fn pop_unclaimed(&self) -> Option<Arc<TaskState>> {
        while let Some(task) = self.deque.pop() {
            if task.try_claim() {
                return Some(task);
            }
        }
        None
    }

    fn steal_unclaimed(&self) -> Option<Arc<TaskState>> {
        let n = self.shared.stealers.len();
        if n <= 1 {
            return None;
        }
        for _ in 0..2 * n {
            let pick = self.rng.borrow_mut().gen_range(0..n - 1);
            let victim = if pick >= self.index { pick + 1 } else { pick };
            let mut attempts = 0;
            loop {
                match self.shared.stealers[victim].steal() {
                    Steal::Success(task) => {
                        if task.try_claim() {
                            self.shared.steals.fetch_add(1, Ordering::Relaxed);
                            return Some(task);
                        }
                        // already claimed elsewhere; keep draining this victim
                    }
                    Steal::Retry => {
                        attempts += 1;
                        if attempts > 4 {
                            break;
                        }
                    }
                    Steal::Empty => break,
                }
            }
        }
        None
    }

    /// Run a claimed task to completion, including its nested waits.
    fn execute(&self, state: &Arc<TaskState>) {
        let shared = self.shared;
        let mut ctx = SpawnContext {
            wctx: self,
            path: state.path.clone(),
            body: &state.body,
            next_child: 0,
        };
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
            state.body.run(&state.input, &mut ctx)
        }));
        let spawned = ctx.next_child;
        match outcome {
            Ok(bytes) => self.complete(state, spawned, bytes),
            Err(payload) => {
                if payload.downcast_ref::<Abort>().is_some() {
                    // a failure is already recorded; keep unwinding
                    panic::resume_unwind(payload);
                }
                let message = panic_message(payload.as_ref());
                shared.abort(RuntimeError::TaskPanicked {
                    path: state.path.clone(),
                    message,
                });
            }
        }
    }

    fn complete(&self, state: &Arc<TaskState>, spawned: u32, mut bytes: Vec<u8>) {
        let shared = self.shared;
        let path = &state.path;
        if let Mode::Replay(round) = &shared.mode {
            if round.original.child_count_of(path) != Some(spawned) {
                shared.abort(RuntimeError::ShapeDiverged { path: path.clone() });
            }
        }
        // the fault hook fires on the produced bytes before anything records
        // or consumes them: the corrupted value is what the parent sees
        for plan in &shared.faults {
            plan.apply(shared.replica, path, &mut bytes);
        }
        match &shared.mode {
            Mode::Tracked(trace) => {
                if let Err(err) = trace.record_result(path, bytes.clone()) {
                    shared.abort(RuntimeError::Trace(err));
                }
            }
            Mode::Replay(round) => {
                let matches_original =
                    round.original.result_of(path).as_deref() == Some(bytes.as_slice());
                let matches_twin = round.twin.result_of(path).as_deref() == Some(bytes.as_slice());
                if !matches_original && !matches_twin {
                    round
                        .unresolved
                        .lock()
                        .expect("unresolved set")
                        .insert(path.clone());
                }
                round.results.insert(path.clone(), bytes.clone());
            }
            Mode::Plain => {}
        }
        shared.tasks.fetch_add(1, Ordering::Relaxed);
        shared.per_worker[self.index].fetch_add(1, Ordering::Relaxed);
        let _ = state.result.set(bytes);
        if path.is_root() {
            shared.done.store(true, Ordering::SeqCst);
        }
    }

    /// Wait for a spawned task: claim and run it inline when still pending,
    /// otherwise help with other work until its result appears.
    fn await_result(&self, state: &Arc<TaskState>) -> Vec<u8> {
        let mut idle: u32 = 0;
        loop {
            if let Some(bytes) = state.result.get() {
                return bytes.clone();
            }
            if self.shared.aborted.load(Ordering::SeqCst) {
                panic::panic_any(Abort);
            }
            if state.try_claim() {
                self.execute(state);
                continue;
            }
            if let Some(task) = self.pop_unclaimed() {
                self.execute(&task);
                idle = 0;
                continue;
            }
            if let Some(task) = self.steal_unclaimed() {
                self.execute(&task);
                idle = 0;
                continue;
            }
            if self.shared.done.load(Ordering::SeqCst) {
                if let Some(bytes) = state.result.get() {
                    return bytes.clone();
                }
                // the run ended while this task is unfinished; only a
                // failure or a body that returned without syncing gets here
                self.shared.fail(RuntimeError::TaskPanicked {
                    path: state.path.clone(),
                    message: "waited on a task after the run ended".to_string(),
                });
                panic::panic_any(Abort);
            }
            backoff(&mut idle);
        }
    }

    fn worker_loop(&self) {
        let mut idle: u32 = 0;
        loop {
            if self.shared.done.load(Ordering::SeqCst) {
                return;
            }
            if let Some(task) = self.pop_unclaimed().or_else(|| self.steal_unclaimed()) {
                self.execute(&task);
                idle = 0;
            } else {
                backoff(&mut idle);
            }
        }
    }
}

fn backoff(idle: &mut u32) {
    *idle += 1;
    if *idle < 64 {
        std::hint::spin_loop();
    } else if *idle < 128 {
        std::thread::yield_now();
    } else {
        std::thread::sleep(Duration::from_micros(20));
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "<non-string panic payload>".to_string()
    }
}

/// Handle to a spawned child. Retrieve it with [`SpawnContext::get`]; the
/// body must retrieve every handle it spawned before returning.
#[must_use = "every spawned handle must be retrieved with get()"]
pub struct TaskHandle(HandleInner);

enum HandleInner {
    /// Suppressed spawn: the recorded result stands in for execution.
    Completed(Vec<u8>),
    Pending(Arc<TaskState>),
}

/// Spawn and sync interface handed to a running task body.
pub struct SpawnContext<'a> {
    wctx: &'a WorkerCtx<'a>,
    path: TaskPath,
    body: &'a Arc<dyn TaskBody>,
    next_child: u32,
}

impl SpawnContext<'_> {
    /// This task's position in the tree.
    pub fn path(&self) -> &TaskPath {
        &self.path
    }

    /// Spawn a child running `body` on `input`. Children are numbered in
    /// spawn order. During replay, spawns of unmarked tasks are suppressed
    /// and the recorded agreed result is returned to the parent instead.
    pub fn spawn(&mut self, body: &Arc<dyn TaskBody>, input: Vec<u8>) -> TaskHandle {
        let index = self.next_child;
        self.next_child += 1;
        let child_path = self.path.child(index);
        let shared = self.wctx.shared;
        match &shared.mode {
            Mode::Tracked(trace) => {
                if let Err(err) = trace.record_spawn(&self.path, index) {
                    shared.abort(RuntimeError::Trace(err));
                }
            }
            Mode::Replay(round) => {
                if !round.marked.contains(&child_path) {
                    match round.reuse_value(&self.path, &child_path) {
                        Ok(value) => {
                            round.reused.fetch_add(1, Ordering::Relaxed);
                            return TaskHandle(HandleInner::Completed(value));
                        }
                        Err(err) => shared.abort(err),
                    }
                }
            }
            Mode::Plain => {}
        }
        shared.spawns.fetch_add(1, Ordering::Relaxed);
        let state = Arc::new(TaskState::new(child_path, Arc::clone(body), input));
        self.wctx.deque.push(Arc::clone(&state));
        TaskHandle(HandleInner::Pending(state))
    }

    /// Spawn a child running the same body as the current task.
    pub fn spawn_self(&mut self, input: Vec<u8>) -> TaskHandle {
        let body = Arc::clone(self.body);
        self.spawn(&body, input)
    }

    /// Combined sync and result retrieval. Blocks (productively) until the
    /// child's result is available.
    pub fn get(&mut self, handle: TaskHandle) -> Vec<u8> {
        match handle.0 {
            HandleInner::Completed(bytes) => bytes,
            HandleInner::Pending(state) => self.wctx.await_result(&state),
        }
    }
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

fn run_inner(
    body: &Arc<dyn TaskBody>,
    input: &[u8],
    config: &RuntimeConfig,
    replica: Replica,
    mode: Mode<'_>,
) -> Result<(Vec<u8>, RunStats), RuntimeError> {
    if config.workers == 0 {
        return Err(RuntimeError::Config("workers must be >= 1".to_string()));
    }
    let worker_count = config.workers;
    let replica_seed = derive_seed(config.steal_seed, replica as u64);

    let deques: Vec<Worker<Arc<TaskState>>> =
        (0..worker_count).map(|_| Worker::new_lifo()).collect();
    let shared = Shared {
        stealers: deques.iter().map(Worker::stealer).collect(),
        done: AtomicBool::new(false),
        aborted: AtomicBool::new(false),
        failure: Mutex::new(None),
        mode,
        replica,
        faults: config.faults.clone(),
        spawns: AtomicU64::new(0),
        tasks: AtomicU64::new(0),
        steals: AtomicU64::new(0),
        per_worker: (0..worker_count).map(|_| AtomicU64::new(0)).collect(),
    };

    let root = Arc::new(TaskState::new(
        TaskPath::root(),
        Arc::clone(body),
        input.to_vec(),
    ));

    // every worker gets its own thread with a deep stack: nested waits
    // execute claimed tasks inline, so stack use grows with tree depth
    std::thread::scope(|scope| {
        let shared_ref = &shared;
        for (index, deque) in deques.into_iter().enumerate() {
            let root_task = (index == 0).then(|| Arc::clone(&root));
            std::thread::Builder::new()
                .name(format!("twinfork-worker-{index}"))
                .stack_size(WORKER_STACK_BYTES)
                .spawn_scoped(scope, move || {
                    let wctx = WorkerCtx {
                        index,
                        deque,
                        rng: RefCell::new(ChaCha8Rng::seed_from_u64(derive_seed(
                            replica_seed,
                            index as u64,
                        ))),
                        shared: shared_ref,
                    };
                    let _ = panic::catch_unwind(AssertUnwindSafe(|| match root_task {
                        Some(root) => {
                            let claimed = root.try_claim();
                            debug_assert!(claimed, "root claimed before execution");
                            wctx.execute(&root);
                        }
                        None => wctx.worker_loop(),
                    }));
                })
                .expect("spawn worker thread");
        }
    });

    if let Some(err) = shared.failure.into_inner().expect("failure slot") {
        return Err(err);
    }
    let final_result = root
        .result
        .get()
        .cloned()
        .expect("root result present after successful run");
    let stats = RunStats {
        spawns: shared.spawns.into_inner(),
        tasks_executed: shared.tasks.into_inner(),
        steals: shared.steals.into_inner(),
        per_worker_executed: shared
            .per_worker
            .into_iter()
            .map(AtomicU64::into_inner)
            .collect(),
    };
    Ok((final_result, stats))
}

/// Execute `body` on `input` under `config`. Returns the final result and,
/// when tracking is on, the complete recorded trace.
pub fn run(
    body: &Arc<dyn TaskBody>,
    input: &[u8],
    config: &RuntimeConfig,
) -> Result<RunOutput, RuntimeError> {
    let trace = config.tracking.then(Trace::new);
    let mode = match &trace {
        Some(t) => Mode::Tracked(t),
        None => Mode::Plain,
    };
    let started = Instant::now();
    let (final_result, stats) = run_inner(body, input, config, Replica::Original, mode)?;
    Ok(RunOutput {
        final_result,
        trace,
        stats,
        duration: started.elapsed(),
    })
}

/// Run the original and twin replicas back to back on the full worker pool,
/// recording both task trees. Fault plans fire only in the replica they
/// name. Tracking is always on here; replication without the trees would
/// leave nothing to compare.
pub fn run_replicated(
    body: &Arc<dyn TaskBody>,
    input: &[u8],
    config: &RuntimeConfig,
) -> Result<ReplicatedRun, RuntimeError> {
    let original = Trace::new();
    let started = Instant::now();
    let (_, original_stats) = run_inner(
        body,
        input,
        config,
        Replica::Original,
        Mode::Tracked(&original),
    )?;
    let original_duration = started.elapsed();

    let twin = Trace::new();
    let started = Instant::now();
    let (_, twin_stats) = run_inner(body, input, config, Replica::Twin, Mode::Tracked(&twin))?;
    let twin_duration = started.elapsed();

    Ok(ReplicatedRun {
        original,
        twin,
        original_duration,
        twin_duration,
        original_stats,
        twin_stats,
    })
}

/// One replay round: re-execute the round's marked set, suppressing all
/// other spawns. Used by the recovery replayer.
pub(crate) fn run_replay_round(
    body: &Arc<dyn TaskBody>,
    input: &[u8],
    config: &RuntimeConfig,
    round: &ReplayRound<'_>,
) -> Result<(Vec<u8>, RunStats), RuntimeError> {
    run_inner(body, input, config, Replica::Reprocessing, Mode::Replay(round))
}
