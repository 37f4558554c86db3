mod common;

use common::opcheck::{all_cases, check};
use ttd::rng::SeedStream;

#[test]
fn every_op_matches_fp64_central_differences() {
    let mut rng = SeedStream::new(77);
    let mut failures = Vec::new();
    for case in all_cases(13) {
        let r = check(&case, &mut rng).unwrap();
        assert!(r.checked > 0, "{}: no elements checked", r.name);
        if r.max_rel_error >= 1e-3 {
            failures.push(format!("{} ({:.2e})", r.name, r.max_rel_error));
        }
    }
    assert!(failures.is_empty(), "ops over tolerance: {failures:?}");
}
