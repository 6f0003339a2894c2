use std::io::Write;

use chaincs::acceptance::{run_suite, CRITERIA, RUNTIME_LIMITS};

#[test]
fn acceptance_criteria() {
    let (report, secs) = run_suite(1);
    assert_eq!(report.criteria.len(), CRITERIA.len());
    let mut failed = Vec::new();
    for c in &report.criteria {
        let limit = RUNTIME_LIMITS[c.id - 1];
        let took = secs.get(c.id - 1).copied();
        let slow = took.is_some_and(|s| s >= limit);
        let pass = c.pass && !slow;
        let timing = match took {
            Some(s) => format!(" [{s:.1}s of {limit:.0}s]"),
            None => String::new(),
        };
        // straight to the handle so the lines survive output capture
        let line = format!("{}{timing}{}\n", c.line(), if slow { " too slow" } else { "" });
        std::io::stderr().write_all(line.as_bytes()).unwrap();
        if !pass {
            failed.push(c.id);
        }
    }
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
