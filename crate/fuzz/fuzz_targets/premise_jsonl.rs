#![no_main]

use libfuzzer_sys::fuzz_target;
use probtab::artifacts::{premises_from_jsonl, premises_to_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(premises) = premises_from_jsonl(text) {
        let out = premises_to_jsonl(&premises);
        assert_eq!(premises_from_jsonl(&out).unwrap(), premises);
    }
});
