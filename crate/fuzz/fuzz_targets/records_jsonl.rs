#![no_main]

use libfuzzer_sys::fuzz_target;
use probtab::eval::{compute_metrics, records_from_jsonl, records_to_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = records_from_jsonl(text) {
        assert_eq!(records_from_jsonl(&records_to_jsonl(&records)).unwrap(), records);
        if let Ok(m) = compute_metrics(&records) {
            assert!((0.0..=100.0).contains(&m.error_rate));
        }
    }
});
