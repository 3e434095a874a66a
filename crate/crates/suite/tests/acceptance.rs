//! All acceptance criteria at their stated tolerances, one line each.
//! Slow (several minutes); the bump-metric criterion dominates.

use weakkam_core::suite::{run_criterion, SuiteOptions, CRITERIA};

#[test]
fn acceptance() {
    let opts = SuiteOptions::default();
    let mut failed = Vec::new();
    for id in CRITERIA {
        let o = run_criterion(id, &opts);
        println!("{}", o.line());
        for (k, v) in &o.metrics {
            println!("    {k} = {v}");
        }
        if !o.passed {
            failed.push(id);
        }
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failed.len(), CRITERIA.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
