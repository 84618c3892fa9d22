//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities (run with `--nocapture` to see them).
//!
//! Criterion 8's process-level half (nonzero exit code from the CLI) lives
//! in the harness crate's acceptance tests, next to the binary it checks.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use twinfork::analysis;
use twinfork::bench::{decode_u64, BenchSpec};
use twinfork::detect::{detect, mark_corrupted, DetectError, Verdict};
use twinfork::fault::{FaultPlan, FaultTargets, Replica};
use twinfork::pipeline::{
    run_pipeline, run_repetitions, PipelineError, PipelineRequest,
};
use twinfork::replay::{replay, ReplayError};
use twinfork::runtime::{body_fn, run, RuntimeConfig, TaskBody};
use twinfork::{derive_seed, TaskPath, Trace};

fn encode(n: u64) -> Vec<u8> {
    n.to_le_bytes().to_vec()
}

#[test]
fn criterion_01_recovery_correctness() {
    let started = Instant::now();
    let mut total_runs = 0u32;
    for workers in [1usize, 4, 8] {
        for sdc_count in 1..=5usize {
            let mut base = PipelineRequest::new(BenchSpec::Fib { n: 30, cutoff: 15 });
            base.workers = workers;
            base.steal_seed = derive_seed(0xACC1, (workers * 10 + sdc_count) as u64);
            base.max_rounds = 3;
            base.faults.push(FaultPlan {
                replica: Replica::Original,
                targets: FaultTargets::Sampled {
                    count: sdc_count,
                    selection_seed: derive_seed(0xACC2, (workers * 10 + sdc_count) as u64),
                },
                bits_per_fault: 1,
                bit_seed: derive_seed(0xACC3, (workers * 10 + sdc_count) as u64),
            });
            let (reports, aggregate) = run_repetitions(&base, 100).unwrap();
            assert!(
                aggregate.all_correct,
                "workers={workers} sdc={sdc_count}: a repetition recovered the wrong final"
            );
            assert_eq!(reports.len(), 100);
            total_runs += 100;
        }
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 600,
        "criterion 1 exceeded the runtime budget: {elapsed:?}"
    );
    println!(
        "acceptance criterion 1 PASS: {total_runs} fib(30,c=15) recoveries all correct in {:.1}s",
        elapsed.as_secs_f64()
    );
}

// --- criterion 2: the worked twelve-task scenario -------------------------
//
// Tree (children left to right):            A
//                                          /  \
//                                         B    C
//                                        / \    \
//                                       D   E    F*
//                                      / \   \
//                                     G   H*  I
//                                        / \   \
//                                       J   K   L
//
// Corruption sources are H and F. H's bad result propagates upward through
// D and B to A, and sideways into J and E via parameter passing. C consumed
// F's bad value but still returned a correct result, so the traversal stops
// there and F's subtree is never visited; likewise I agrees, hiding L.

const FIG1_NODES: [(char, &[char], u64); 12] = [
    ('A', &['B', 'C'], 2),
    ('B', &['D', 'E'], 1),
    ('C', &['F'], 4),
    ('D', &['G', 'H'], 1),
    ('E', &['I'], 6),
    ('F', &[], 11),
    ('G', &[], 7),
    ('H', &['J', 'K'], 5),
    ('I', &['L'], 2),
    ('J', &[], 3),
    ('K', &[], 4),
    ('L', &[], 9),
];

fn fig1_children(node: char) -> &'static [char] {
    FIG1_NODES.iter().find(|(n, ..)| *n == node).unwrap().1
}

fn fig1_base(node: char) -> u64 {
    FIG1_NODES.iter().find(|(n, ..)| *n == node).unwrap().2
}

/// Correct value: own base plus the sum of child values.
fn fig1_correct(node: char) -> u64 {
    fig1_base(node)
        + fig1_children(node)
            .iter()
            .map(|c| fig1_correct(*c))
            .sum::<u64>()
}

fn fig1_corrupted(node: char) -> u64 {
    match node {
        'H' => 99,  // corruption source
        'F' => 77,  // corruption source, masked by C
        'J' => 13,  // tainted by H through parameter passing
        'E' => 25,  // tainted by H's bad result feeding its input
        'D' => 107, // consumed H's bad result
        'B' => 130,
        'A' => 147,
        other => fig1_correct(other),
    }
}

fn fig1_path(node: char) -> TaskPath {
    match node {
        'A' => TaskPath::root(),
        'B' => TaskPath::from_indices([0]),
        'C' => TaskPath::from_indices([1]),
        'D' => TaskPath::from_indices([0, 0]),
        'E' => TaskPath::from_indices([0, 1]),
        'F' => TaskPath::from_indices([1, 0]),
        'G' => TaskPath::from_indices([0, 0, 0]),
        'H' => TaskPath::from_indices([0, 0, 1]),
        'I' => TaskPath::from_indices([0, 1, 0]),
        'J' => TaskPath::from_indices([0, 0, 1, 0]),
        'K' => TaskPath::from_indices([0, 0, 1, 1]),
        'L' => TaskPath::from_indices([0, 1, 0, 0]),
        _ => unreachable!(),
    }
}

fn fig1_trace(value: impl Fn(char) -> u64) -> Trace {
    let trace = Trace::new();
    // spawns, parents before children
    for (node, children, _) in FIG1_NODES {
        for (index, _) in children.iter().enumerate() {
            trace.record_spawn(&fig1_path(node), index as u32).unwrap();
        }
    }
    // results in post-order
    for node in ['G', 'J', 'K', 'H', 'D', 'L', 'I', 'E', 'B', 'F', 'C', 'A'] {
        trace
            .record_result(&fig1_path(node), encode(value(node)))
            .unwrap();
    }
    trace.validate().unwrap();
    trace
}

/// Table-driven body reproducing the scenario's clean semantics.
fn fig1_body() -> Arc<dyn TaskBody> {
    body_fn(|input, ctx| {
        let node = input[0] as char;
        let handles: Vec<_> = fig1_children(node)
            .iter()
            .map(|child| ctx.spawn_self(vec![*child as u8]))
            .collect();
        let mut total = fig1_base(node);
        for handle in handles {
            total = total.wrapping_add(decode_u64(&ctx.get(handle)));
        }
        encode(total)
    })
}

#[test]
fn criterion_02_worked_scenario_fixture() {
    // the fixture is encoded in the trace dump format and parsed back
    let original = Trace::parse_dump(&fig1_trace(fig1_corrupted).dump().unwrap()).unwrap();
    let twin = Trace::parse_dump(&fig1_trace(fig1_correct).dump().unwrap()).unwrap();
    assert_eq!(detect(&original, &twin).unwrap(), Verdict::Disagree);

    let marked = mark_corrupted(&original, &twin).unwrap();
    let want_marked: BTreeSet<TaskPath> =
        ['A', 'B', 'D', 'E', 'H', 'J'].iter().map(|n| fig1_path(*n)).collect();
    assert_eq!(marked.paths(), &want_marked);

    let frontier = marked.agreed_frontier(&original).unwrap();
    let want_frontier: BTreeSet<TaskPath> =
        ['C', 'G', 'I', 'K'].iter().map(|n| fig1_path(*n)).collect();
    assert_eq!(frontier, want_frontier);

    // 9 comparisons = sum of child counts over the marked set; L (child of
    // the agreed I) was therefore never visited
    assert_eq!(marked.visited_comparisons(), 9);

    let outcome = replay(
        &fig1_body(),
        b"A",
        &original,
        &twin,
        &marked,
        &RuntimeConfig::new(2),
        3,
    )
    .unwrap();
    assert_eq!(decode_u64(&outcome.final_result), fig1_correct('A'));
    assert_eq!(outcome.rounds, 1);
    assert_eq!(outcome.recomputed, 6);
    assert_eq!(outcome.reused, 4, "exactly C, G, I, K substituted");

    println!(
        "acceptance criterion 2 PASS: marked {{A,B,D,E,H,J}}, reused {{C,G,I,K}}, \
         9 comparisons (L unvisited), replay final {}",
        decode_u64(&outcome.final_result)
    );
}

#[test]
fn criterion_03_path_length_law() {
    let config = RuntimeConfig::new(1).with_steal_seed(3);
    for depth in 0..=10u32 {
        // alternate branches on the way down; any fixed path works
        let indices: Vec<u32> = (0..depth).map(|level| level % 2).collect();
        let target = TaskPath::from_indices(indices);
        let marked = analysis::marked_size_for_flip(10, &target, 0, &config).unwrap();
        assert_eq!(
            marked,
            u64::from(depth) + 1,
            "flip at depth {depth} marked {marked} tasks"
        );
    }
    println!("acceptance criterion 3 PASS: |marked| = d+1 for every depth d in 0..=10 at h=10");
}

#[test]
fn criterion_04_analysis_cross_check() {
    for h in 1..=30u32 {
        let closed = analysis::expected_reprocessed_closed(h).unwrap();
        let exact = analysis::expected_reprocessed_exact(h).unwrap();
        let relative = ((closed - exact) / exact).abs();
        assert!(relative < 1e-12, "h={h}: closed={closed} exact={exact}");
    }
    let h1 = analysis::expected_reprocessed_closed(1).unwrap();
    assert!((h1 - 10.0 / 3.0).abs() < 1e-12, "h=1 expected 10/3, got {h1}");
    let ratio = analysis::expected_reprocessed_closed(30).unwrap() / 60.0;
    assert!((ratio - 1.0).abs() < 1e-8, "closed(30)/(2*30) = {ratio}");
    println!(
        "acceptance criterion 4 PASS: closed = exact to 1e-12 for h in 1..=30; \
         h=1 gives 10/3; closed(30)/60 within 1e-8 of 1"
    );
}

#[test]
fn criterion_05_monte_carlo_agreement() {
    let exact = analysis::expected_reprocessed_exact(10).unwrap();
    for seed in [11u64, 222, 3333, 44444, 555555] {
        let (mean, std_error) = analysis::monte_carlo_reprocessed(10, 100_000, seed).unwrap();
        let gap = (mean - exact).abs();
        assert!(
            gap <= 3.0 * std_error,
            "seed={seed}: mean={mean} exact={exact} se={std_error}"
        );
    }
    println!(
        "acceptance criterion 5 PASS: 100k-trial Monte Carlo within 3 standard errors \
         of E[C]={exact:.6} at h=10 for 5 seeds"
    );
}

#[test]
fn criterion_06_sublinear_union_growth() {
    let mean_marked = |sdc_count: usize| -> f64 {
        let mut base = PipelineRequest::new(BenchSpec::Tree {
            height: 12,
            work_units: 0,
        });
        base.workers = 2;
        base.steal_seed = derive_seed(0x6u64, sdc_count as u64);
        base.faults.push(FaultPlan {
            replica: Replica::Original,
            targets: FaultTargets::Sampled {
                count: sdc_count,
                selection_seed: derive_seed(0x66u64, sdc_count as u64),
            },
            bits_per_fault: 1,
            bit_seed: derive_seed(0x666u64, sdc_count as u64),
        });
        let (_, aggregate) = run_repetitions(&base, 20).unwrap();
        aggregate.mean_marked
    };
    let single = mean_marked(1);
    let five = mean_marked(5);
    assert!(
        five < 5.0 * single,
        "mean marked for k=5 ({five}) not below 5 x k=1 mean ({single})"
    );
    println!(
        "acceptance criterion 6 PASS: h=12, 20 seeds: mean |marked| k=5 is {five:.2} \
         < 5 x {single:.2} (k=1)"
    );
}

#[test]
fn criterion_07_determinism() {
    let benchmarks = [
        BenchSpec::Fib { n: 18, cutoff: 5 },
        BenchSpec::Chain { depth: 4, width: 3 },
        BenchSpec::Tree {
            height: 8,
            work_units: 2,
        },
    ];
    for bench in &benchmarks {
        let body = bench.body();
        let input = bench.input();
        let mut reference: Option<(Vec<u8>, [u8; 32])> = None;
        for workers in [1usize, 2, 8] {
            for seed in [1u64, 2, 3, 4, 5] {
                let config = RuntimeConfig::new(workers).with_steal_seed(seed);
                let out = run(&body, &input, &config).unwrap();
                let signature = out.trace.unwrap().structural_signature().unwrap();
                let observed = (out.final_result, signature);
                match &reference {
                    None => reference = Some(observed),
                    Some(want) => assert_eq!(
                        want,
                        &observed,
                        "{} diverged at workers={workers} seed={seed}",
                        bench.label()
                    ),
                }
            }
        }
    }
    println!(
        "acceptance criterion 7 PASS: (final, structural signature) identical across \
         workers {{1,2,8}} x 5 steal seeds for fib, chain, tree"
    );
}

#[test]
fn criterion_08_abort_semantics() {
    let request = PipelineRequest::new(BenchSpec::Nondet);
    let err = run_pipeline(&request).unwrap_err();
    let named_path = match err {
        PipelineError::Detect(DetectError::ChildCountMismatch(path)) => path,
        other => panic!("expected a child-count mismatch, got {other}"),
    };
    assert_eq!(named_path, TaskPath::root(), "the divergent task is the root");
    // the diagnostic names the path in its rendered form
    let rendered = DetectError::ChildCountMismatch(named_path.clone()).to_string();
    assert!(rendered.contains(&named_path.to_string()));
    println!(
        "acceptance criterion 8 PASS: nondeterministic body aborts with a child-count \
         mismatch naming task `{named_path}` (nonzero exit covered by the CLI acceptance test)"
    );
}

#[test]
fn criterion_09_repeat_rule() {
    let target = TaskPath::from_indices([0, 0, 1]);
    let build = |max_rounds: u32| {
        let mut request = PipelineRequest::new(BenchSpec::Fib { n: 14, cutoff: 4 });
        request.workers = 2;
        request.steal_seed = 9;
        request.max_rounds = max_rounds;
        request.faults.push(FaultPlan {
            replica: Replica::Original,
            targets: FaultTargets::Explicit(vec![target.clone()]),
            bits_per_fault: 1,
            bit_seed: 101,
        });
        request.faults.push(FaultPlan {
            replica: Replica::Reprocessing,
            targets: FaultTargets::Explicit(vec![target.clone()]),
            bits_per_fault: 1,
            bit_seed: 202,
        });
        request
    };

    let report = run_pipeline(&build(3)).unwrap().report;
    assert_eq!(report.rounds, 2);
    assert!(report.correct);

    let err = run_pipeline(&build(1)).unwrap_err();
    assert!(matches!(
        err,
        PipelineError::Replay(ReplayError::RoundsExhausted { rounds: 1, .. })
    ));
    println!(
        "acceptance criterion 9 PASS: reprocessing-time fault resolves in round 2 with a \
         correct final; max_rounds=1 raises RoundsExhausted"
    );
}

#[test]
fn criterion_10_tracking_accounting() {
    let benchmarks = [
        BenchSpec::Fib { n: 16, cutoff: 4 },
        BenchSpec::Chain { depth: 3, width: 3 },
        BenchSpec::Tree {
            height: 6,
            work_units: 1,
        },
    ];
    for bench in &benchmarks {
        let out = run(&bench.body(), &bench.input(), &RuntimeConfig::new(4)).unwrap();
        let trace = out.trace.unwrap();
        let recorded_spawns = (trace.len() - 1) as u64;
        let recorded_results = trace
            .records_sorted()
            .iter()
            .filter(|r| r.result.is_some())
            .count() as u64;
        assert_eq!(
            out.stats.spawns,
            recorded_spawns,
            "{}: spawn events executed vs recorded",
            bench.label()
        );
        assert_eq!(
            out.stats.tasks_executed,
            recorded_results,
            "{}: tasks executed vs results recorded",
            bench.label()
        );
    }
    println!(
        "acceptance criterion 10 PASS: recorded spawns equal executed spawns and recorded \
         results equal executed tasks for fib, chain, tree"
    );
}
