#![no_main]

use fairaudit::pipeline::PipelineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = PipelineConfig::from_toml(text) {
        if let Ok(plan) = cfg.resolve() {
            assert!(plan.len() >= 3);
        }
    }
});
