#![no_main]

use fairaudit::learners::{Classifier, Model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = Classifier::from_json(text) {
        if !matches!(c.model, Model::Stratified(_)) {
            let row = vec![0.5; c.feature_names.len()];
            for s in c.predict_matrix(&row) {
                assert!(!s.is_nan());
            }
        }
        let back = Classifier::from_json(&c.to_json()).expect("written classifiers load");
        assert_eq!(back.feature_names, c.feature_names);
    }
});
