#![no_main]

use libfuzzer_sys::fuzz_target;
use probtab::artifacts::{insights_from_jsonl, insights_to_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(insights) = insights_from_jsonl(text) {
        let out = insights_to_jsonl(&insights);
        assert_eq!(insights_from_jsonl(&out).unwrap(), insights);
    }
});
