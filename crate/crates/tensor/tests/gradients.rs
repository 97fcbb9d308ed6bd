mod support;

use support::op_cases::{cases, run};

#[test]
fn every_op_matches_central_differences() {
    for case in cases() {
        let report = run(&case, 20, 11);
        assert!(
            report.max_rel_error <= 1e-4,
            "{}: {:?}",
            case.name,
            report
        );
    }
}
