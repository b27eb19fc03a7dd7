#![no_main]

use libfuzzer_sys::fuzz_target;
use probtab::benchgen::{items_from_jsonl, items_to_jsonl};
use probtab::ingest::Codebook;

const CODEBOOK: &str = include_str!("../corpus/codebook_json/weather.json");

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let codebook = Codebook::from_json(CODEBOOK).unwrap();
    if let Ok(items) = items_from_jsonl(text, &codebook) {
        let out = items_to_jsonl(&items, &codebook);
        assert_eq!(items_from_jsonl(&out, &codebook).unwrap(), items);
    }
});
