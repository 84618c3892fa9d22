//! Detection of silent data corruption by replica comparison.
//!
//! [`detect`] compares the two replicas' final results byte for byte. On a
//! mismatch, [`mark_corrupted`] walks both task trees simultaneously from
//! the root: it marks the current task, compares each child's recorded
//! result across the replicas, stops descending wherever the children
//! agree, and recurses into every mismatching child. The marked set is
//! exactly the set of corrupted tasks that could have reached the final
//! result; the compared-and-agreed children form the reuse frontier for
//! replay. A child-count mismatch between the trees means the program
//! violated the determinism contract, and the traversal aborts.
//!
//! The traversal is single-context and iterative: the inputs are quiescent,
//! completed traces, and an explicit stack avoids recursion limits on tall
//! trees.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::trace::{TaskPath, TaskRecord, Trace};

/// Outcome of the final-result comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Agree,
    Disagree,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DetectError {
    #[error("trace is not complete")]
    Incomplete,
    #[error("child count mismatch between replicas at task {0}")]
    ChildCountMismatch(TaskPath),
    #[error("record missing at {0} (trace invariant violated)")]
    MissingRecord(TaskPath),
}

/// The tasks to be reprocessed, plus how many child comparisons the
/// traversal performed.
#[derive(Debug, Clone, Default)]
pub struct MarkedSet {
    paths: BTreeSet<TaskPath>,
    visited_comparisons: u64,
}

impl MarkedSet {
    /// The empty set: nothing to reprocess.
    pub fn empty() -> Self {
        MarkedSet::default()
    }

    pub fn paths(&self) -> &BTreeSet<TaskPath> {
        &self.paths
    }

    pub fn contains(&self, path: &TaskPath) -> bool {
        self.paths.contains(path)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn visited_comparisons(&self) -> u64 {
        self.visited_comparisons
    }

    /// The reuse frontier: unmarked children of marked tasks. Their results
    /// were compared and agree in both replicas, which is what licenses
    /// substituting them during replay.
    pub fn agreed_frontier(&self, trace: &Trace) -> Result<BTreeSet<TaskPath>, DetectError> {
        let mut frontier = BTreeSet::new();
        for path in &self.paths {
            let child_count = trace
                .child_count_of(path)
                .ok_or_else(|| DetectError::MissingRecord(path.clone()))?;
            for index in 0..child_count {
                let child = path.child(index);
                if !self.paths.contains(&child) {
                    frontier.insert(child);
                }
            }
        }
        Ok(frontier)
    }

    /// Annotated copy of a trace's records with the corruption mark set on
    /// members of this set. Traces themselves stay immutable after
    /// completion; this view is for replayers and inspection.
    pub fn annotate(&self, trace: &Trace) -> Vec<TaskRecord> {
        let mut records = trace.records_sorted();
        for record in &mut records {
            record.marked = self.paths.contains(&record.path);
        }
        records
    }
}

/// Compare the final results of the two replicas.
pub fn detect(original: &Trace, twin: &Trace) -> Result<Verdict, DetectError> {
    let a = original.final_result().ok_or(DetectError::Incomplete)?;
    let b = twin.final_result().ok_or(DetectError::Incomplete)?;
    Ok(if a == b {
        Verdict::Agree
    } else {
        Verdict::Disagree
    })
}

fn results_equal(original: &Trace, twin: &Trace, path: &TaskPath) -> Result<bool, DetectError> {
    let a = original
        .view(path)
        .ok_or_else(|| DetectError::MissingRecord(path.clone()))?;
    let b = twin
        .view(path)
        .ok_or_else(|| DetectError::MissingRecord(path.clone()))?;
    Ok(a.result == b.result)
}

/// Simultaneous depth-first traversal marking every corrupted task with
/// impact on the final result. Call after [`detect`] returned
/// [`Verdict::Disagree`]; both traces must be complete.
pub fn mark_corrupted(original: &Trace, twin: &Trace) -> Result<MarkedSet, DetectError> {
    if !original.is_complete() || !twin.is_complete() {
        return Err(DetectError::Incomplete);
    }
    let mut marked = BTreeSet::new();
    let mut visited_comparisons = 0u64;
    let mut stack = vec![TaskPath::root()];
    while let Some(path) = stack.pop() {
        marked.insert(path.clone());
        let original_count = original
            .child_count_of(&path)
            .ok_or_else(|| DetectError::MissingRecord(path.clone()))?;
        let twin_count = twin
            .child_count_of(&path)
            .ok_or_else(|| DetectError::MissingRecord(path.clone()))?;
        if original_count != twin_count {
            return Err(DetectError::ChildCountMismatch(path));
        }
        // compare children in ascending index order; descend only on mismatch
        let mut mismatching = Vec::new();
        for index in 0..original_count {
            let child = path.child(index);
            visited_comparisons += 1;
            if !results_equal(original, twin, &child)? {
                mismatching.push(child);
            }
        }
        // reversed push keeps the depth-first visit in ascending child order
        for child in mismatching.into_iter().rev() {
            stack.push(child);
        }
    }
    Ok(MarkedSet {
        paths: marked,
        visited_comparisons,
    })
}
