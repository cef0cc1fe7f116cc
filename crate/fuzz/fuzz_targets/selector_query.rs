#![no_main]

use std::collections::BTreeMap;

use fairaudit::compare::SelectorConfig;
use fairaudit_cli::service::parse_selector;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(query) = serde_urlencoded::from_bytes::<BTreeMap<String, String>>(data) else { return };
    if let Ok(sel) = parse_selector(&query, SelectorConfig::default(), "citizenship") {
        sel.validate().expect("accepted selectors validate");
    }
});
