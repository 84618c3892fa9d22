//! Deterministic injection of silent data corruptions.
//!
//! A [`FaultPlan`] names a replica and a set of target tasks; arming it
//! against a completed reference trace resolves the targets to concrete
//! [`TaskPath`]s. The runtime consults the armed plan at every task return
//! and XOR-flips seeded bit positions in the produced result bytes, so the
//! corrupted value is exactly what the parent consumes and what the trace
//! records. Children of a corrupted task have already run by then, so a
//! single flip taints only the path to the root unless the program feeds
//! sibling results forward.
//!
//! Everything is keyed by path and seed, never by schedule: the same plan
//! over the same tree shape corrupts the same tasks at the same bit
//! positions regardless of worker count or steal order.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::seeds::mix64;
use crate::trace::{TaskPath, Trace};

/// Which execution a fault plan corrupts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Replica {
    Original,
    Twin,
    /// The replay executed during recovery; off the beaten path, used to
    /// exercise the repeat rule.
    Reprocessing,
}

impl fmt::Display for Replica {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Replica::Original => "original",
            Replica::Twin => "twin",
            Replica::Reprocessing => "reprocess",
        })
    }
}

impl FromStr for Replica {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self, FaultError> {
        match s {
            "original" => Ok(Replica::Original),
            "twin" => Ok(Replica::Twin),
            "reprocess" | "reprocessing" => Ok(Replica::Reprocessing),
            other => Err(FaultError::UnknownReplica(other.to_string())),
        }
    }
}

/// Target selection: explicit paths, or a uniform sample over the tasks of
/// a reference trace.
#[derive(Clone, Debug)]
pub enum FaultTargets {
    Explicit(Vec<TaskPath>),
    Sampled { count: usize, selection_seed: u64 },
}

/// Description of which task results get bit-flipped, in which replica.
#[derive(Clone, Debug)]
pub struct FaultPlan {
    pub replica: Replica,
    pub targets: FaultTargets,
    pub bits_per_fault: u32,
    pub bit_seed: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FaultError {
    #[error("bit position {position} out of range for a {bits}-bit result")]
    PositionOutOfRange { position: usize, bits: usize },
    #[error("fault target {0} does not occur in the reference trace")]
    TargetPathInvalid(TaskPath),
    #[error("requested {requested} fault targets but the trace has only {available} tasks")]
    TooManyTargets { requested: usize, available: usize },
    #[error("unknown replica `{0}`")]
    UnknownReplica(String),
}

/// Flip exactly the given bit positions (XOR semantics); length unchanged.
/// Bit `p` is bit `p % 8` (LSB first) of byte `p / 8`.
pub fn corrupt(result: &[u8], bit_positions: &[usize]) -> Result<Vec<u8>, FaultError> {
    let bits = result.len() * 8;
    let mut out = result.to_vec();
    for &position in bit_positions {
        if position >= bits {
            return Err(FaultError::PositionOutOfRange { position, bits });
        }
        out[position / 8] ^= 1 << (position % 8);
    }
    Ok(out)
}

impl FaultPlan {
    /// Resolve the plan's targets against a completed reference trace.
    ///
    /// Sampled selection draws `count` distinct tasks from the trace's paths
    /// in lexicographic order with a seeded generator, so the chosen set
    /// depends only on the tree shape and the seed, never on scheduling.
    /// Explicit targets are validated against the reference and deduplicated:
    /// each selected target is hit exactly once.
    pub fn arm(&self, reference: &Trace) -> Result<ArmedFaultPlan, FaultError> {
        let targets = match &self.targets {
            FaultTargets::Explicit(paths) => {
                let mut set = BTreeSet::new();
                for path in paths {
                    if !reference.contains(path) {
                        return Err(FaultError::TargetPathInvalid(path.clone()));
                    }
                    set.insert(path.clone());
                }
                set
            }
            FaultTargets::Sampled {
                count,
                selection_seed,
            } => {
                let paths = reference.paths();
                if *count > paths.len() {
                    return Err(FaultError::TooManyTargets {
                        requested: *count,
                        available: paths.len(),
                    });
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*selection_seed);
                rand::seq::index::sample(&mut rng, paths.len(), *count)
                    .into_iter()
                    .map(|i| paths[i].clone())
                    .collect()
            }
        };
        Ok(ArmedFaultPlan {
            replica: self.replica,
            targets,
            bits_per_fault: self.bits_per_fault.max(1),
            bit_seed: self.bit_seed,
            applied: Mutex::new(BTreeSet::new()),
        })
    }
}

/// A fault plan with resolved targets, ready for the runtime's result-return
/// hook. Tracks which targets have fired so each is hit exactly once, even
/// across replay rounds.
#[derive(Debug)]
pub struct ArmedFaultPlan {
    replica: Replica,
    targets: BTreeSet<TaskPath>,
    bits_per_fault: u32,
    bit_seed: u64,
    applied: Mutex<BTreeSet<TaskPath>>,
}

impl ArmedFaultPlan {
    pub fn replica(&self) -> Replica {
        self.replica
    }

    pub fn targets(&self) -> &BTreeSet<TaskPath> {
        &self.targets
    }

    /// Result-return hook. Corrupts `result` in place when `path` is a
    /// not-yet-hit target in the matching replica; returns whether it fired.
    /// Safe to call concurrently for distinct tasks.
    pub fn apply(&self, replica: Replica, path: &TaskPath, result: &mut Vec<u8>) -> bool {
        if replica != self.replica || !self.targets.contains(path) {
            return false;
        }
        {
            let mut applied = self.applied.lock().expect("fault plan lock");
            if !applied.insert(path.clone()) {
                return false;
            }
        }
        let bits = result.len() * 8;
        if bits == 0 {
            return false;
        }
        let positions = self.bit_positions(path, bits);
        *result = corrupt(result, &positions).expect("positions bounded by result length");
        true
    }

    /// The bit positions this plan flips in a `bits`-bit result at `path`:
    /// `bits_per_fault` distinct positions drawn from a generator seeded by
    /// (bit_seed, path), so reruns flip the same bits.
    pub fn bit_positions(&self, path: &TaskPath, bits: usize) -> Vec<usize> {
        let mut seed = mix64(self.bit_seed);
        for &index in path.indices() {
            seed = mix64(seed ^ (u64::from(index) + 1));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amount = (self.bits_per_fault as usize).min(bits);
        let mut positions = rand::seq::index::sample(&mut rng, bits, amount).into_vec();
        positions.sort_unstable();
        positions
    }
}
