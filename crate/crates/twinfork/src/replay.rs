//! Recovery by selective re-execution.
//!
//! [`replay`] restarts the computation from the root, re-executing only the
//! tasks in the marked set. Whenever a replayed task spawns an unmarked
//! child, the spawn is suppressed and the recorded result — byte-identical
//! in both replicas at every frontier path — is handed to the parent
//! instead. Each recomputed result is checked against the task's two prior
//! replica values at completion: matching at least one accepts it (two out
//! of three executions agree); matching neither leaves the task unresolved,
//! and after the round finishes a further round re-executes the unresolved
//! tasks together with their ancestors. Rounds repeat until a round ends
//! with nothing unresolved or the round budget runs out.
//!
//! Replay runs on the configured worker pool; suppression decisions depend
//! only on task paths, so parallel replay is schedule-independent. A marked
//! task that spawns a different child count than its recorded shape aborts
//! the replay, mirroring the traversal's abort on divergent trees.

use std::collections::BTreeSet;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use dashmap::DashMap;
use thiserror::Error;

use crate::detect::MarkedSet;
use crate::runtime::{run_replay_round, ReplayRound, RuntimeConfig, RuntimeError, TaskBody};
use crate::trace::{TaskPath, Trace, TraceError};

/// What a replay did: its final result and the work it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub final_result: Vec<u8>,
    /// Rounds executed (at least 1).
    pub rounds: u32,
    /// Task bodies executed across all rounds.
    pub recomputed: u64,
    /// Spawns suppressed across all rounds.
    pub reused: u64,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("{unresolved} task(s) still unresolved after {rounds} round(s), first {sample}")]
    RoundsExhausted {
        rounds: u32,
        unresolved: usize,
        sample: TaskPath,
    },
}

/// Re-run the computation, re-executing only marked tasks and reusing the
/// recorded agreed results of everything else.
///
/// `marked` must come from the traversal over `(original, twin)` (or be
/// empty, in which case the recorded final result is returned untouched).
pub fn replay(
    body: &Arc<dyn TaskBody>,
    input: &[u8],
    original: &Trace,
    twin: &Trace,
    marked: &MarkedSet,
    config: &RuntimeConfig,
    max_rounds: u32,
) -> Result<ReplayOutcome, ReplayError> {
    if max_rounds == 0 {
        return Err(RuntimeError::Config("max_rounds must be >= 1".to_string()).into());
    }
    if marked.is_empty() {
        let final_result = original
            .final_result()
            .ok_or(RuntimeError::Trace(TraceError::Incomplete))?
            .to_vec();
        return Ok(ReplayOutcome {
            final_result,
            rounds: 1,
            recomputed: 0,
            reused: 0,
        });
    }

    // values accepted in earlier rounds, reused ahead of the recorded traces
    let resolved: DashMap<TaskPath, Vec<u8>> = DashMap::new();
    let mut current: BTreeSet<TaskPath> = marked.paths().clone();
    let mut recomputed = 0u64;
    let mut reused = 0u64;

    for round_index in 1..=max_rounds {
        debug_assert!(current.contains(&TaskPath::root()), "marked set upward closed");
        let round = ReplayRound::new(&current, original, twin, &resolved);
        let (final_result, stats) = run_replay_round(body, input, config, &round)?;
        recomputed += stats.tasks_executed;
        reused += round.reused.load(Ordering::Relaxed);

        let unresolved = round.unresolved.into_inner().expect("unresolved set");
        for (path, value) in round.results {
            if !unresolved.contains(&path) {
                resolved.insert(path, value);
            }
        }
        if unresolved.is_empty() {
            return Ok(ReplayOutcome {
                final_result,
                rounds: round_index,
                recomputed,
                reused,
            });
        }
        if round_index == max_rounds {
            let sample = unresolved.iter().next().expect("non-empty").clone();
            return Err(ReplayError::RoundsExhausted {
                rounds: max_rounds,
                unresolved: unresolved.len(),
                sample,
            });
        }
        // next round re-executes the unresolved tasks plus their ancestors:
        // spawn suppression can only reach tasks whose ancestors all re-run
        let mut next = BTreeSet::new();
        for path in unresolved {
            next.extend(path.ancestors());
            next.insert(path);
        }
        current = next;
    }
    unreachable!("loop returns or errors within max_rounds iterations")
}
