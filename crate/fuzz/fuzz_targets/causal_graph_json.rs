#![no_main]

use fairaudit::causal::CausalGraph;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = CausalGraph::from_json(text) {
        if let Ok(order) = g.topological_order() {
            for n in &order {
                let _ = g.descendants(n);
            }
        }
        assert_eq!(CausalGraph::from_json(&g.to_json()).expect("written graphs load"), g);
    }
});
