#![no_main]

use fairaudit::compare::SelectorConfig;
use fairaudit::pipeline::Experiment;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(e) = Experiment::from_json(text) {
        let _ = e.render_table();
        let _ = e.comparison(&SelectorConfig::default());
        let back = Experiment::from_json(&e.to_json()).expect("written experiments load");
        assert_eq!(back.canonical_json(), e.canonical_json());
    }
});
