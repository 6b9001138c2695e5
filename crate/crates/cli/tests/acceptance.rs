//! Runs every acceptance criterion and prints one line per criterion.
//! Criterion 11 drives the built binary twice and compares its output bytes.

use std::process::{Command, ExitCode};
use std::time::Instant;

use ustree_core::suite::{criterion_name, run_criterion, CriterionResult};

const SEED: u64 = 1;

fn binary_determinism() -> CriterionResult {
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_ustree"))
            .args(["suite", "--seed", "1", "--json"])
            .output()
            .expect("spawn ustree")
    };
    let (a, b) = (run(), run());
    let same = a.stdout == b.stdout && !a.stdout.is_empty();
    let parsed: Option<serde_json::Value> = serde_json::from_slice(&a.stdout).ok();
    let schema = parsed.as_ref().and_then(|v| v.get("schema")).and_then(|v| v.as_u64());
    CriterionResult {
        id: 11,
        name: criterion_name(11).into(),
        passed: same && schema == Some(1),
        summary: format!(
            "two runs of `suite --seed 1 --json`: {} ({} bytes, exit {:?}/{:?})",
            if same { "byte-identical" } else { "differ" },
            a.stdout.len(),
            a.status.code(),
            b.status.code()
        ),
        metrics: serde_json::Value::Null,
    }
}

fn main() -> ExitCode {
    let mut failed = 0;
    for id in 1..=11u32 {
        let t = Instant::now();
        let r = if id == 11 { binary_determinism() } else { run_criterion(id, SEED) };
        let mark = if r.passed { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {mark} {:<22} {} [{:.1?}]", r.id, r.name, r.summary, t.elapsed());
        if !r.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
