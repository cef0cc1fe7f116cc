#![no_main]

use fairaudit::mitigation::post::{expected_decisions, ThresholdPolicy};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = ThresholdPolicy::from_json(text) {
        let scores = [0.0, 0.25, 0.5, 0.75, 1.0, 0.5];
        let groups = [0, 1, 0, 1, 0, 1];
        let strata = [0, 0, 1, 1, 2, 2];
        if let Ok(d) = expected_decisions(&p, &scores, &groups, Some(&strata)) {
            assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
});
