//! Task identity and the recorded task tree.
//!
//! A [`Trace`] is the record of one complete fork-join execution: one
//! [`TaskRecord`] per task, keyed by [`TaskPath`]. Paths identify a task by
//! the sequence of child indices leading to it from the root, which makes
//! task identity independent of worker count and steal order, so two
//! independent executions of the same deterministic program produce traces
//! that can be matched key by key.
//!
//! Recording is concurrent: workers call [`Trace::record_spawn`] and
//! [`Trace::record_result`] on distinct paths in parallel. Structural
//! queries ([`Trace::children`], [`Trace::structural_signature`], the dump
//! format) assume a quiescent, complete trace.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use dashmap::DashMap;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Position of a task in the tree: the child index chosen at each level.
/// The root is the empty sequence. Ordering is lexicographic on indices.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TaskPath(Vec<u32>);

impl TaskPath {
    /// The root task's path (empty index sequence).
    pub const fn root() -> Self {
        TaskPath(Vec::new())
    }

    pub fn from_indices(indices: impl Into<Vec<u32>>) -> Self {
        TaskPath(indices.into())
    }

    /// Path of this task's `index`-th child.
    pub fn child(&self, index: u32) -> Self {
        let mut indices = Vec::with_capacity(self.0.len() + 1);
        indices.extend_from_slice(&self.0);
        indices.push(index);
        TaskPath(indices)
    }

    /// Parent path, or `None` for the root.
    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(TaskPath(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of edges from the root; the root has depth 0.
    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    /// Proper ancestors, nearest first, ending with the root.
    pub fn ancestors(&self) -> impl Iterator<Item = TaskPath> + '_ {
        (0..self.0.len())
            .rev()
            .map(move |len| TaskPath(self.0[..len].to_vec()))
    }
}

impl fmt::Display for TaskPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("·");
        }
        let mut first = true;
        for index in &self.0 {
            if !first {
                f.write_str(".")?;
            }
            write!(f, "{index}")?;
            first = false;
        }
        Ok(())
    }
}

// Debug delegates to Display; paths read better dotted than as index vecs.
impl fmt::Debug for TaskPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for TaskPath {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, TraceError> {
        if s == "·" || s.is_empty() {
            return Ok(TaskPath::root());
        }
        let indices = s
            .split('.')
            .map(|part| {
                part.parse::<u32>().map_err(|_| TraceError::MalformedPath {
                    text: s.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TaskPath(indices))
    }
}

/// One task's trace entry: its serialized result, how many children it
/// spawned, and the corruption mark (left false during tracking; only the
/// detection pass sets it, via an annotated view).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskRecord {
    pub path: TaskPath,
    pub result: Option<Vec<u8>>,
    pub child_count: u32,
    pub marked: bool,
}

impl TaskRecord {
    fn empty(path: TaskPath) -> Self {
        TaskRecord {
            path,
            result: None,
            child_count: 0,
            marked: false,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("unknown parent path {0}")]
    UnknownParent(TaskPath),
    #[error("unknown path {0}")]
    UnknownPath(TaskPath),
    #[error("non-contiguous child index {got} under {parent} (expected {expected})")]
    NonContiguousChild {
        parent: TaskPath,
        expected: u32,
        got: u32,
    },
    #[error("result already recorded at {0}")]
    DoubleWrite(TaskPath),
    #[error("children of {0} incomplete at result recording")]
    ChildrenIncomplete(TaskPath),
    #[error("trace is not complete")]
    Incomplete,
    #[error("malformed task path `{text}`")]
    MalformedPath { text: String },
    #[error("malformed trace dump at line {line}: {reason}")]
    MalformedDump { line: usize, reason: String },
    #[error("invariant violation at {path}: {reason}")]
    InvariantViolation { path: TaskPath, reason: String },
}

/// The recorded task tree of one execution plus its final result.
///
/// Always contains at least the root record. `record_spawn` and
/// `record_result` may run concurrently from multiple workers on distinct
/// paths; the runtime guarantees operations on the same path are never
/// concurrent.
pub struct Trace {
    records: DashMap<TaskPath, TaskRecord>,
    final_result: OnceLock<Vec<u8>>,
}

impl Default for Trace {
    fn default() -> Self {
        Self::new()
    }
}

impl Trace {
    pub fn new() -> Self {
        let records = DashMap::new();
        records.insert(TaskPath::root(), TaskRecord::empty(TaskPath::root()));
        Trace {
            records,
            final_result: OnceLock::new(),
        }
    }

    /// Record that `parent` spawned its next child. `child_index` must equal
    /// the number of children already recorded under `parent`; indices are
    /// assigned in program spawn order so both replicas number children
    /// identically.
    pub fn record_spawn(&self, parent: &TaskPath, child_index: u32) -> Result<TaskPath, TraceError> {
        {
            let mut parent_record = self
                .records
                .get_mut(parent)
                .ok_or_else(|| TraceError::UnknownParent(parent.clone()))?;
            if parent_record.child_count != child_index {
                return Err(TraceError::NonContiguousChild {
                    parent: parent.clone(),
                    expected: parent_record.child_count,
                    got: child_index,
                });
            }
            parent_record.child_count += 1;
            // guard dropped here; never hold two shard references at once
        }
        let child = parent.child(child_index);
        self.records
            .insert(child.clone(), TaskRecord::empty(child.clone()));
        Ok(child)
    }

    /// Record a task's result. All of its children must already carry
    /// results (tasks complete in post-order). Completing the root fixes the
    /// trace's final result and marks it complete.
    pub fn record_result(&self, path: &TaskPath, result: Vec<u8>) -> Result<(), TraceError> {
        let child_count = {
            let record = self
                .records
                .get(path)
                .ok_or_else(|| TraceError::UnknownPath(path.clone()))?;
            if record.result.is_some() {
                return Err(TraceError::DoubleWrite(path.clone()));
            }
            record.child_count
        };
        for index in 0..child_count {
            let child = path.child(index);
            let complete = self
                .records
                .get(&child)
                .map(|r| r.result.is_some())
                .unwrap_or(false);
            if !complete {
                return Err(TraceError::ChildrenIncomplete(path.clone()));
            }
        }
        {
            let mut record = self
                .records
                .get_mut(path)
                .ok_or_else(|| TraceError::UnknownPath(path.clone()))?;
            record.result = Some(result.clone());
        }
        if path.is_root() {
            let _ = self.final_result.set(result);
        }
        Ok(())
    }

    /// Records of `path`'s children in index order.
    pub fn children(&self, path: &TaskPath) -> Result<Vec<TaskRecord>, TraceError> {
        let child_count = self
            .records
            .get(path)
            .ok_or_else(|| TraceError::UnknownPath(path.clone()))?
            .child_count;
        let mut out = Vec::with_capacity(child_count as usize);
        for index in 0..child_count {
            let child = path.child(index);
            let record = self
                .records
                .get(&child)
                .ok_or_else(|| TraceError::UnknownPath(child.clone()))?;
            out.push(record.clone());
        }
        Ok(out)
    }

    /// Canonical digest over `(path, child_count)` pairs in lexicographic
    /// path order. Equal for traces with the same tree shape no matter how
    /// recording interleaved; results do not participate.
    pub fn structural_signature(&self) -> Result<[u8; 32], TraceError> {
        if !self.is_complete() {
            return Err(TraceError::Incomplete);
        }
        let mut hasher = Sha256::new();
        for record in self.records_sorted() {
            hasher.update((record.path.depth() as u64).to_le_bytes());
            for index in record.path.indices() {
                hasher.update(index.to_le_bytes());
            }
            hasher.update(record.child_count.to_le_bytes());
        }
        Ok(hasher.finalize().into())
    }

    /// True once the root result has been recorded.
    pub fn is_complete(&self) -> bool {
        self.final_result.get().is_some()
    }

    pub fn final_result(&self) -> Option<&[u8]> {
        self.final_result.get().map(Vec::as_slice)
    }

    /// Number of task records (the root counts, so this is spawns + 1).
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the root record always exists
    }

    pub fn contains(&self, path: &TaskPath) -> bool {
        self.records.contains_key(path)
    }

    /// Clone of the record at `path`, if present.
    pub fn record(&self, path: &TaskPath) -> Option<TaskRecord> {
        self.records.get(path).map(|r| r.clone())
    }

    pub fn child_count_of(&self, path: &TaskPath) -> Option<u32> {
        self.records.get(path).map(|r| r.child_count)
    }

    /// Clone of the result bytes at `path`; `None` if the path is absent or
    /// its result is unset.
    pub fn result_of(&self, path: &TaskPath) -> Option<Vec<u8>> {
        self.records.get(path).and_then(|r| r.result.clone())
    }

    /// Borrowing view of a record, for clone-free comparisons within the
    /// crate. Callers must not hold two views into the same trace.
    pub(crate) fn view(
        &self,
        path: &TaskPath,
    ) -> Option<dashmap::mapref::one::Ref<'_, TaskPath, TaskRecord>> {
        self.records.get(path)
    }

    /// All paths in ascending (lexicographic) order. Quiescent traces only.
    pub fn paths(&self) -> Vec<TaskPath> {
        let mut paths: Vec<TaskPath> = self.records.iter().map(|r| r.key().clone()).collect();
        paths.sort();
        paths
    }

    /// All records in ascending path order. Quiescent traces only.
    pub fn records_sorted(&self) -> Vec<TaskRecord> {
        let mut records: Vec<TaskRecord> = self.records.iter().map(|r| r.clone()).collect();
        records.sort_by(|a, b| a.path.cmp(&b.path));
        records
    }

    /// Full-scan check of the structural invariants: prefix closure, child
    /// contiguity, and (when complete) final result matching the root's.
    pub fn validate(&self) -> Result<(), TraceError> {
        let present: BTreeSet<TaskPath> = self.records.iter().map(|r| r.key().clone()).collect();
        if !present.contains(&TaskPath::root()) {
            return Err(TraceError::InvariantViolation {
                path: TaskPath::root(),
                reason: "root record missing".to_string(),
            });
        }
        for path in &present {
            if let Some(parent) = path.parent() {
                if !present.contains(&parent) {
                    return Err(TraceError::InvariantViolation {
                        path: path.clone(),
                        reason: "parent record missing (prefix closure)".to_string(),
                    });
                }
                let parent_count = self
                    .records
                    .get(&parent)
                    .expect("present path")
                    .child_count;
                let index = *path.indices().last().expect("non-root path");
                if index >= parent_count {
                    return Err(TraceError::InvariantViolation {
                        path: path.clone(),
                        reason: format!(
                            "child index {index} beyond parent child_count {parent_count}"
                        ),
                    });
                }
            }
            let record = self.records.get(path).expect("present path");
            for index in 0..record.child_count {
                if !present.contains(&path.child(index)) {
                    return Err(TraceError::InvariantViolation {
                        path: path.clone(),
                        reason: format!("child {index} missing (contiguity)"),
                    });
                }
            }
        }
        if let Some(final_result) = self.final_result.get() {
            let root = self.records.get(&TaskPath::root()).expect("root present");
            if root.result.as_deref() != Some(final_result.as_slice()) {
                return Err(TraceError::InvariantViolation {
                    path: TaskPath::root(),
                    reason: "final result differs from root record".to_string(),
                });
            }
        }
        Ok(())
    }

    /// Line-delimited text dump: `path TAB child_count TAB hex(result)`,
    /// one record per line in lexicographic path order, root rendered `·`.
    /// Requires a complete trace.
    pub fn dump(&self) -> Result<String, TraceError> {
        if !self.is_complete() {
            return Err(TraceError::Incomplete);
        }
        let mut out = String::new();
        for record in self.records_sorted() {
            let result = record.result.as_ref().ok_or(TraceError::Incomplete)?;
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                record.path,
                record.child_count,
                hex::encode(result)
            ));
        }
        Ok(out)
    }

    /// Parse a dump produced by [`Trace::dump`], validating the structural
    /// invariants and completeness.
    pub fn parse_dump(text: &str) -> Result<Trace, TraceError> {
        let trace = Trace {
            records: DashMap::new(),
            final_result: OnceLock::new(),
        };
        for (line_index, line) in text.lines().enumerate() {
            let line_no = line_index + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (path, count, result) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
                (Some(p), Some(c), Some(r), None) => (p, c, r),
                _ => {
                    return Err(TraceError::MalformedDump {
                        line: line_no,
                        reason: "expected 3 tab-separated fields".to_string(),
                    })
                }
            };
            let path: TaskPath = path.parse().map_err(|_| TraceError::MalformedDump {
                line: line_no,
                reason: format!("bad path `{path}`"),
            })?;
            let child_count: u32 = count.parse().map_err(|_| TraceError::MalformedDump {
                line: line_no,
                reason: format!("bad child count `{count}`"),
            })?;
            let result = hex::decode(result).map_err(|_| TraceError::MalformedDump {
                line: line_no,
                reason: "bad hex result".to_string(),
            })?;
            let previous = trace.records.insert(
                path.clone(),
                TaskRecord {
                    path: path.clone(),
                    result: Some(result),
                    child_count,
                    marked: false,
                },
            );
            if previous.is_some() {
                return Err(TraceError::MalformedDump {
                    line: line_no,
                    reason: format!("duplicate record for {path}"),
                });
            }
        }
        let root_result = trace
            .records
            .get(&TaskPath::root())
            .and_then(|r| r.result.clone())
            .ok_or(TraceError::MalformedDump {
                line: 0,
                reason: "missing root record".to_string(),
            })?;
        let _ = trace.final_result.set(root_result);
        trace.validate()?;
        Ok(trace)
    }
}

impl fmt::Debug for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Trace")
            .field("records", &self.records.len())
            .field("complete", &self.is_complete())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn le(n: u64) -> Vec<u8> {
        n.to_le_bytes().to_vec()
    }

    /// Hand-unrolled recursion of naive fib(3) with fib(0)=fib(1)=1:
    /// root spawns fib(2) and fib(1); fib(2) spawns fib(1) and fib(0).
    fn fib3_trace() -> Trace {
        let t = Trace::new();
        let root = TaskPath::root();
        let c0 = t.record_spawn(&root, 0).unwrap();
        let c1 = t.record_spawn(&root, 1).unwrap();
        let c00 = t.record_spawn(&c0, 0).unwrap();
        let c01 = t.record_spawn(&c0, 1).unwrap();
        t.record_result(&c00, le(1)).unwrap();
        t.record_result(&c01, le(1)).unwrap();
        t.record_result(&c0, le(2)).unwrap();
        t.record_result(&c1, le(1)).unwrap();
        t.record_result(&root, le(3)).unwrap();
        t
    }

    #[test]
    fn spawn_assigns_extended_paths() {
        let t = Trace::new();
        let first = t.record_spawn(&TaskPath::root(), 0).unwrap();
        assert_eq!(first, TaskPath::from_indices([0]));
        let second = t.record_spawn(&first, 0).unwrap();
        let third = t.record_spawn(&first, 1).unwrap();
        assert_eq!(second, TaskPath::from_indices([0, 0]));
        assert_eq!(third, TaskPath::from_indices([0, 1]));
    }

    #[test]
    fn fib3_has_five_records() {
        let t = fib3_trace();
        assert_eq!(t.len(), 5);
        assert!(t.is_complete());
        assert_eq!(t.final_result(), Some(le(3).as_slice()));
        t.validate().unwrap();
    }

    #[test]
    fn spawn_rejects_gaps_and_unknown_parents() {
        let t = Trace::new();
        let err = t.record_spawn(&TaskPath::root(), 1).unwrap_err();
        assert!(matches!(err, TraceError::NonContiguousChild { got: 1, .. }));
        let absent = TaskPath::from_indices([4]);
        assert_eq!(
            t.record_spawn(&absent, 0).unwrap_err(),
            TraceError::UnknownParent(absent)
        );
    }

    #[test]
    fn result_requires_completed_children() {
        let t = Trace::new();
        let c0 = t.record_spawn(&TaskPath::root(), 0).unwrap();
        assert_eq!(
            t.record_result(&TaskPath::root(), le(1)).unwrap_err(),
            TraceError::ChildrenIncomplete(TaskPath::root())
        );
        t.record_result(&c0, le(1)).unwrap();
        t.record_result(&TaskPath::root(), le(1)).unwrap();
        assert!(t.is_complete());
    }

    #[test]
    fn result_rejects_double_write() {
        let t = Trace::new();
        t.record_result(&TaskPath::root(), le(7)).unwrap();
        assert_eq!(
            t.record_result(&TaskPath::root(), le(8)).unwrap_err(),
            TraceError::DoubleWrite(TaskPath::root())
        );
    }

    #[test]
    fn children_in_index_order() {
        let t = fib3_trace();
        let root_children = t.children(&TaskPath::root()).unwrap();
        assert_eq!(root_children.len(), 2);
        assert_eq!(root_children[0].path, TaskPath::from_indices([0]));
        assert_eq!(root_children[1].path, TaskPath::from_indices([1]));
        let leaf = TaskPath::from_indices([1]);
        assert!(t.children(&leaf).unwrap().is_empty());
        let absent = TaskPath::from_indices([9]);
        assert_eq!(
            t.children(&absent).unwrap_err(),
            TraceError::UnknownPath(absent)
        );
    }

    #[test]
    fn signature_ignores_results_but_not_shape() {
        let a = fib3_trace();
        let b = fib3_trace();
        assert_eq!(
            a.structural_signature().unwrap(),
            b.structural_signature().unwrap()
        );

        // same shape, different payloads
        let c = Trace::new();
        let c0 = c.record_spawn(&TaskPath::root(), 0).unwrap();
        let c1 = c.record_spawn(&TaskPath::root(), 1).unwrap();
        let c00 = c.record_spawn(&c0, 0).unwrap();
        let c01 = c.record_spawn(&c0, 1).unwrap();
        for p in [&c00, &c01, &c0, &c1] {
            c.record_result(p, le(99)).unwrap();
        }
        c.record_result(&TaskPath::root(), le(98)).unwrap();
        assert_eq!(
            a.structural_signature().unwrap(),
            c.structural_signature().unwrap()
        );

        // different shape
        let d = Trace::new();
        let d0 = d.record_spawn(&TaskPath::root(), 0).unwrap();
        d.record_result(&d0, le(1)).unwrap();
        d.record_result(&TaskPath::root(), le(1)).unwrap();
        assert_ne!(
            a.structural_signature().unwrap(),
            d.structural_signature().unwrap()
        );
    }

    #[test]
    fn signature_requires_completion() {
        let t = Trace::new();
        assert_eq!(t.structural_signature().unwrap_err(), TraceError::Incomplete);
        t.record_result(&TaskPath::root(), le(0)).unwrap();
        let sig = t.structural_signature().unwrap();
        assert_eq!(sig, t.structural_signature().unwrap());
    }

    #[test]
    fn dump_golden_format() {
        let t = Trace::new();
        let c0 = t.record_spawn(&TaskPath::root(), 0).unwrap();
        let c1 = t.record_spawn(&TaskPath::root(), 1).unwrap();
        t.record_result(&c0, vec![0x01]).unwrap();
        t.record_result(&c1, vec![]).unwrap();
        t.record_result(&TaskPath::root(), vec![0xAB, 0xCD]).unwrap();
        assert_eq!(t.dump().unwrap(), "·\t2\tabcd\n0\t0\t01\n1\t0\t\n");
    }

    #[test]
    fn dump_round_trips() {
        let t = fib3_trace();
        let text = t.dump().unwrap();
        let parsed = Trace::parse_dump(&text).unwrap();
        assert_eq!(parsed.dump().unwrap(), text);
        assert_eq!(
            parsed.structural_signature().unwrap(),
            t.structural_signature().unwrap()
        );
        assert_eq!(parsed.final_result(), t.final_result());
    }

    #[test]
    fn parse_rejects_malformed_dumps() {
        assert!(matches!(
            Trace::parse_dump("·\t2\n").unwrap_err(),
            TraceError::MalformedDump { line: 1, .. }
        ));
        // contiguity violation: child 1 recorded without child 0
        let bad = "·\t2\t00\n1\t0\t00\n";
        assert!(Trace::parse_dump(bad).is_err());
        // orphan child beyond the parent's recorded child_count
        let orphan = "·\t1\t00\n0\t0\t00\n2\t0\t00\n";
        assert!(Trace::parse_dump(orphan).is_err());
        // no root line
        assert!(Trace::parse_dump("0\t0\t00\n").is_err());
    }

    #[test]
    fn path_display_and_parse() {
        let p = TaskPath::from_indices([0, 1, 0]);
        assert_eq!(p.to_string(), "0.1.0");
        assert_eq!("0.1.0".parse::<TaskPath>().unwrap(), p);
        assert_eq!("·".parse::<TaskPath>().unwrap(), TaskPath::root());
        assert_eq!(TaskPath::root().to_string(), "·");
        assert!("0.x".parse::<TaskPath>().is_err());
    }

    #[test]
    fn path_ancestors_and_ordering() {
        let p = TaskPath::from_indices([2, 0, 1]);
        let ancestors: Vec<TaskPath> = p.ancestors().collect();
        assert_eq!(
            ancestors,
            vec![
                TaskPath::from_indices([2, 0]),
                TaskPath::from_indices([2]),
                TaskPath::root(),
            ]
        );
        // lexicographic: [] < [0] < [0,0] < [0,1] < [1]
        let mut paths = vec![
            TaskPath::from_indices([0, 1]),
            TaskPath::root(),
            TaskPath::from_indices([1]),
            TaskPath::from_indices([0]),
            TaskPath::from_indices([0, 0]),
        ];
        paths.sort();
        assert_eq!(
            paths,
            vec![
                TaskPath::root(),
                TaskPath::from_indices([0]),
                TaskPath::from_indices([0, 0]),
                TaskPath::from_indices([0, 1]),
                TaskPath::from_indices([1]),
            ]
        );
    }

    #[test]
    fn concurrent_recording_on_distinct_paths() {
        let t = Trace::new();
        let lanes: Vec<TaskPath> = (0..4)
            .map(|i| t.record_spawn(&TaskPath::root(), i).unwrap())
            .collect();
        std::thread::scope(|scope| {
            for lane in &lanes {
                let t = &t;
                scope.spawn(move || {
                    let mut children = Vec::new();
                    for i in 0..50 {
                        children.push(t.record_spawn(lane, i).unwrap());
                    }
                    for child in children {
                        t.record_result(&child, le(1)).unwrap();
                    }
                    t.record_result(lane, le(50)).unwrap();
                });
            }
        });
        t.record_result(&TaskPath::root(), le(200)).unwrap();
        t.validate().unwrap();
        assert_eq!(t.len(), 1 + 4 + 4 * 50);
    }

    /// Arbitrary small tree shape: child counts per node, generated depth-first.
    fn arbitrary_shape() -> impl Strategy<Value = Vec<(TaskPath, u32)>> {
        // Depth-2 trees with up to 4 children per node.
        (prop::collection::vec(0u32..4, 1..4)).prop_map(|top| {
            let mut nodes = vec![(TaskPath::root(), top.len() as u32)];
            for (i, grandchildren) in top.iter().enumerate() {
                let child = TaskPath::root().child(i as u32);
                nodes.push((child.clone(), *grandchildren));
                for j in 0..*grandchildren {
                    nodes.push((child.child(j), 0));
                }
            }
            nodes
        })
    }

    fn build_trace(shape: &[(TaskPath, u32)], completion_seed: u64) -> Trace {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let t = Trace::new();
        // record spawns in path order (parents before children, indices ascending)
        let mut nodes = shape.to_vec();
        nodes.sort_by(|a, b| a.0.cmp(&b.0));
        for (path, _) in &nodes {
            if let Some(parent) = path.parent() {
                let index = *path.indices().last().unwrap();
                t.record_spawn(&parent, index).unwrap();
            }
        }
        // complete in a randomized valid (children-before-parent) order:
        // shuffle, then repeatedly record any node whose children are done
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(completion_seed);
        let mut pending: Vec<TaskPath> = nodes.iter().map(|(p, _)| p.clone()).collect();
        pending.shuffle(&mut rng);
        while !pending.is_empty() {
            let mut progressed = false;
            let mut i = 0;
            while i < pending.len() {
                let path = pending[i].clone();
                if t.record_result(&path, le(path.depth() as u64)).is_ok() {
                    pending.remove(i);
                    progressed = true;
                } else {
                    i += 1;
                }
            }
            assert!(progressed, "completion order stuck");
        }
        t
    }

    proptest! {
        #[test]
        fn signature_invariant_under_completion_order(
            shape in arbitrary_shape(),
            seed_a in any::<u64>(),
            seed_b in any::<u64>(),
        ) {
            let a = build_trace(&shape, seed_a);
            let b = build_trace(&shape, seed_b);
            a.validate().unwrap();
            b.validate().unwrap();
            prop_assert_eq!(
                a.structural_signature().unwrap(),
                b.structural_signature().unwrap()
            );
        }

        #[test]
        fn dump_round_trip_preserves_records(shape in arbitrary_shape(), seed in any::<u64>()) {
            let t = build_trace(&shape, seed);
            let parsed = Trace::parse_dump(&t.dump().unwrap()).unwrap();
            prop_assert_eq!(parsed.records_sorted(), t.records_sorted());
        }
    }
}
