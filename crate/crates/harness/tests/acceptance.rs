//! Runs every acceptance criterion and prints one pass/fail line each.
//! Trained artifacts are kept under the cargo target directory for inspection.

use std::path::PathBuf;
use std::process::ExitCode;

use rectiflow_harness::acceptance::{criterion_10, criterion_9, oracle_check, Fig2Options};
use rectiflow_harness::experiment::CHECKPOINT_FILE;

fn main() -> ExitCode {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&root);
    let mut results = Vec::new();
    for r in oracle_check() {
        println!("{r}");
        results.push(r);
    }
    let fig2 = Fig2Options::new(root.join("fig2"));
    let (r9, runs) = criterion_9(&fig2);
    println!("{r9}");
    results.push(r9);
    let checkpoint = runs
        .iter()
        .find(|r| r.model.name() == "mask")
        .map(|r| r.dir.join(CHECKPOINT_FILE));
    let r10 = criterion_10(&root.join("boundary_sweep"), checkpoint.as_deref());
    println!("{r10}");
    results.push(r10);
    let failed: Vec<u8> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
