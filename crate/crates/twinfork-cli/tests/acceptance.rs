//! Process-level acceptance check: the abort semantics criterion requires a
//! nonzero exit code and a diagnostic naming the divergent task path.

use std::process::Command;

#[test]
fn criterion_08_abort_semantics_exit_code() {
    let output = Command::new(env!("CARGO_BIN_EXE_twinfork-bench"))
        .args(["--bench", "nondet"])
        .output()
        .expect("run twinfork-bench");
    assert!(
        !output.status.success(),
        "nondeterministic benchmark must exit nonzero"
    );
    let stderr = String::from_utf8(output.stderr).expect("utf-8 stderr");
    assert!(
        stderr.contains("child count mismatch"),
        "diagnostic should describe the mismatch: {stderr}"
    );
    assert!(
        stderr.contains("task ·"),
        "diagnostic should name the task path: {stderr}"
    );
    println!(
        "acceptance criterion 8 PASS: CLI exited {:?} with diagnostic naming the task path",
        output.status.code()
    );
}
