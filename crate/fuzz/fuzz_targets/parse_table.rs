#![no_main]

use fairaudit::dataset::{parse_table, ReadOptions};
use fairaudit::synthgen;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&first, rest)) = data.split_first() else { return };
    let delimiter = [b',', b';', b'\t', b'|'][first as usize % 4];
    if let Ok(t) = parse_table(rest, &synthgen::schema(), ReadOptions { delimiter }) {
        let again = parse_table(t.to_delimited(delimiter).as_bytes(), t.schema(), ReadOptions { delimiter })
            .expect("written tables parse");
        assert_eq!(again.n_rows(), t.n_rows());
        let _ = t.fingerprint();
        let _ = synthgen::bias_profile(&t);
    }
});
