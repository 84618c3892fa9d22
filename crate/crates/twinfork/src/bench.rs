//! Benchmark task bodies.
//!
//! All bodies produce 8-byte little-endian results and combine child
//! results only through wrapping adds and rotations, so any single-bit
//! change in a child's returned value provably changes every ancestor's
//! value (nothing masks a corruption on its way to the root).

use std::collections::BTreeMap;
use std::hash::{BuildHasher, Hasher, RandomState};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::runtime::{body_fn, TaskBody, TaskHandle};
use crate::seeds::mix64;

pub fn encode_u64(n: u64) -> Vec<u8> {
    n.to_le_bytes().to_vec()
}

pub fn decode_u64(bytes: &[u8]) -> u64 {
    let mut raw = [0u8; 8];
    raw.copy_from_slice(&bytes[..8]);
    u64::from_le_bytes(raw)
}

fn encode_pair(a: u64, b: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(16);
    out.extend_from_slice(&a.to_le_bytes());
    out.extend_from_slice(&b.to_le_bytes());
    out
}

fn decode_pair(bytes: &[u8]) -> (u64, u64) {
    (decode_u64(&bytes[..8]), decode_u64(&bytes[8..16]))
}

/// Naive Fibonacci value with fib(0) = fib(1) = 1, computed iteratively.
pub fn fib_value(n: u64) -> u64 {
    if n < 2 {
        return 1;
    }
    let (mut a, mut b) = (1u64, 1u64);
    for _ in 2..=n {
        let next = a.wrapping_add(b);
        a = b;
        b = next;
    }
    b
}

/// Recursive Fibonacci: a task with argument `n` spawns `fib(n-1)` and
/// `fib(n-2)` and sums the results; arguments at or below `cutoff` are
/// computed sequentially without spawning.
pub fn fib_body(cutoff: u64) -> Arc<dyn TaskBody> {
    body_fn(move |input, ctx| {
        let n = decode_u64(input);
        if n <= cutoff || n < 2 {
            return encode_u64(fib_value(n));
        }
        let a = ctx.spawn_self(encode_u64(n - 1));
        let b = ctx.spawn_self(encode_u64(n - 2));
        let a = decode_u64(&ctx.get(a));
        let b = decode_u64(&ctx.get(b));
        encode_u64(a.wrapping_add(b))
    })
}

pub fn fib_input(n: u64) -> Vec<u8> {
    encode_u64(n)
}

const CHAIN_ROOT_CARRY: u64 = 0x5EED_CA55_E77E_0001;
const CHAIN_LEAF_SALT: u64 = 0x1EAF;

/// Dependent-sibling benchmark: every task spawns `width` children one at a
/// time, feeding child `i`'s result into child `i+1`'s input, so a
/// corrupted early child taints its later siblings' entire subtrees. Tasks
/// at `levels = 0` are leaves.
pub fn chain_body(width: u64) -> Arc<dyn TaskBody> {
    body_fn(move |input, ctx| {
        let (levels, carry) = decode_pair(input);
        if levels == 0 {
            return encode_u64(mix64(carry ^ CHAIN_LEAF_SALT));
        }
        let mut accumulator = mix64(carry);
        let mut feed = carry;
        for index in 0..width {
            let child_carry = mix64(carry ^ mix64(index).wrapping_add(feed));
            let handle = ctx.spawn_self(encode_pair(levels - 1, child_carry));
            let result = decode_u64(&ctx.get(handle));
            feed = result;
            accumulator = accumulator.rotate_left(9).wrapping_add(result);
        }
        encode_u64(accumulator)
    })
}

pub fn chain_input(depth: u64) -> Vec<u8> {
    encode_pair(depth, CHAIN_ROOT_CARRY)
}

const TREE_ROOT_SALT: u64 = 0x7EE0_0D15_0000_0001;

/// Perfect binary tree of the given height with a deterministic busy-work
/// kernel of `work_units` mixing steps per task; the result folds both
/// child results into the task's own kernel value.
pub fn perfect_tree_body(work_units: u64) -> Arc<dyn TaskBody> {
    body_fn(move |input, ctx| {
        let (height, salt) = decode_pair(input);
        let mut own = mix64(salt);
        for _ in 0..work_units {
            own = mix64(own);
        }
        if height == 0 {
            return encode_u64(own);
        }
        let left = ctx.spawn_self(encode_pair(height - 1, mix64(salt ^ 1)));
        let right = ctx.spawn_self(encode_pair(height - 1, mix64(salt ^ 2)));
        let left = decode_u64(&ctx.get(left));
        let right = decode_u64(&ctx.get(right));
        encode_u64(own.wrapping_add(left).wrapping_add(right.rotate_left(1)))
    })
}

pub fn perfect_tree_input(height: u64) -> Vec<u8> {
    encode_pair(height, TREE_ROOT_SALT)
}

/// A body that deliberately violates the determinism contract: the root's
/// child count depends on an unseeded random draw, so independent replicas
/// record different tree shapes and the traversal aborts with a
/// child-count mismatch. Exists to demonstrate the abort semantics.
pub fn nondet_body() -> Arc<dyn TaskBody> {
    let entropy = RandomState::new().build_hasher().finish();
    let draws = Arc::new(AtomicU64::new(0));
    body_fn(move |input, ctx| {
        if !input.is_empty() {
            return encode_u64(mix64(u64::from(input[0])));
        }
        // consecutive draws differ mod 3, so back-to-back replicas always
        // disagree on the root's child count
        let draw = draws.fetch_add(1, Ordering::Relaxed);
        let count = 2 + (entropy.wrapping_add(draw)) % 3;
        let handles: Vec<TaskHandle> = (0..count)
            .map(|i| ctx.spawn_self(vec![i as u8 + 1]))
            .collect();
        let mut accumulator = count;
        for handle in handles {
            accumulator = accumulator
                .rotate_left(9)
                .wrapping_add(decode_u64(&ctx.get(handle)));
        }
        encode_u64(accumulator)
    })
}

/// A benchmark selection with its parameters, as named on the command line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BenchSpec {
    Fib { n: u64, cutoff: u64 },
    Chain { depth: u64, width: u64 },
    Tree { height: u64, work_units: u64 },
    Nondet,
}

impl BenchSpec {
    pub fn body(&self) -> Arc<dyn TaskBody> {
        match self {
            BenchSpec::Fib { cutoff, .. } => fib_body(*cutoff),
            BenchSpec::Chain { width, .. } => chain_body(*width),
            BenchSpec::Tree { work_units, .. } => perfect_tree_body(*work_units),
            BenchSpec::Nondet => nondet_body(),
        }
    }

    pub fn input(&self) -> Vec<u8> {
        match self {
            BenchSpec::Fib { n, .. } => fib_input(*n),
            BenchSpec::Chain { depth, .. } => chain_input(*depth),
            BenchSpec::Tree { height, .. } => perfect_tree_input(*height),
            BenchSpec::Nondet => Vec::new(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            BenchSpec::Fib { .. } => "fib",
            BenchSpec::Chain { .. } => "chain",
            BenchSpec::Tree { .. } => "tree",
            BenchSpec::Nondet => "nondet",
        }
    }

    pub fn params(&self) -> BTreeMap<String, u64> {
        let mut params = BTreeMap::new();
        match self {
            BenchSpec::Fib { n, cutoff } => {
                params.insert("n".to_string(), *n);
                params.insert("cutoff".to_string(), *cutoff);
            }
            BenchSpec::Chain { depth, width } => {
                params.insert("depth".to_string(), *depth);
                params.insert("width".to_string(), *width);
            }
            BenchSpec::Tree { height, work_units } => {
                params.insert("height".to_string(), *height);
                params.insert("work_units".to_string(), *work_units);
            }
            BenchSpec::Nondet => {}
        }
        params
    }
}
