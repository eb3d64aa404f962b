//! Acceptance criteria 1 to 10. The suite runs twice, once on the rayon
//! pool and once sequentially, and the second run must reproduce every CSV
//! byte for byte. Set `LAB_ACCEPTANCE_DIR` to keep the outputs.

use std::io::Write as _;
use std::path::PathBuf;

use neumann_lab::exec::Exec;
use neumann_lab::suite::{determinism, record, run_suite, CriterionResult, SuiteOptions};

fn line(r: &CriterionResult) -> String {
    format!("criterion {:>2} {:<22} {}  {}", r.id, r.name, if r.pass { "PASS" } else { "FAIL" }, r.detail)
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let root = std::env::var_os("LAB_ACCEPTANCE_DIR").map_or_else(|| tmp.path().to_path_buf(), PathBuf::from);
    let (a, b) = (root.join("parallel"), root.join("sequential"));
    let seed = SuiteOptions::default().seed;

    let mut results = run_suite(&a, &SuiteOptions { seed, exec: Exec::Parallel }).unwrap();
    run_suite(&b, &SuiteOptions { seed, exec: Exec::Sequential }).unwrap();
    let det = determinism(&a, &b).unwrap();
    record(&a, &det).unwrap();
    results.push(det);

    // Written to the process stdout so the table shows without --nocapture.
    let mut out = std::io::stdout().lock();
    for r in &results {
        writeln!(out, "{}", line(r)).unwrap();
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.pass).map(|r| r.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
